import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def sigma_table():
    from dimerlab.gibbs import SurfaceTensionTable

    return SurfaceTensionTable()
