#!/usr/bin/env python
"""Command-line entry point: `identities`, `lemmas`, `fatou`, `simulate` and `test`."""
import os
import sys


def main():
    """Run the experiment commands or the test suite."""
    settings_module = 'config.test_settings' if sys.argv[1:2] == ['test'] else 'config.settings'
    os.environ.setdefault('DJANGO_SETTINGS_MODULE', settings_module)
    try:
        from django.core.management import execute_from_command_line
    except ImportError as exc:
        raise ImportError(
            "Couldn't import Django. Are you sure it's installed and "
            "available on your PYTHONPATH environment variable? Did you "
            "forget to activate a virtual environment?"
        ) from exc
    execute_from_command_line(sys.argv)


if __name__ == '__main__':
    main()
