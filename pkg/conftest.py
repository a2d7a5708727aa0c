"""Pytest wiring for the Django test suite.

Mirrors what ``python manage.py test`` does: load the trialsim settings, set up
the test environment and create the test databases for the session.
"""
import os

import django

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'trialsim.settings')
django.setup()

from django.test.runner import DiscoverRunner  # noqa: E402

_runner = DiscoverRunner(verbosity=0, interactive=False)
_state = {}


def pytest_sessionstart(session):
    _runner.setup_test_environment()
    _state['old_config'] = _runner.setup_databases()


def pytest_sessionfinish(session, exitstatus):
    if 'old_config' in _state:
        _runner.teardown_databases(_state.pop('old_config'))
        _runner.teardown_test_environment()
