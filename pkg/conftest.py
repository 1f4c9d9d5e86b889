"""Pytest wiring for test.py, whose test functions report pass/fail by returning a bool."""

import pytest


@pytest.hookimpl(tryfirst=True)
def pytest_pyfunc_call(pyfuncitem):
    funcargs = pyfuncitem.funcargs
    testargs = {arg: funcargs[arg] for arg in pyfuncitem._fixtureinfo.argnames}
    result = pyfuncitem.obj(**testargs)
    if result is False:
        pytest.fail(f"{pyfuncitem.name} reported failure (returned False)", pytrace=False)
    return True
