import pytest

from kfmrc import autodiff as ad


@pytest.fixture(autouse=True)
def _restore_dtype():
    # training switches the global default; keep tests independent of order
    saved = ad.get_default_dtype()
    yield
    ad.set_default_dtype(saved)
