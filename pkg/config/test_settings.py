from .settings import *  # noqa: F401,F403


DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': ':memory:',
    }
}

LOGGING['loggers']['TreeWalks']['level'] = 'WARNING'  # noqa: F405
LOGGING['loggers']['experiments']['level'] = 'WARNING'  # noqa: F405

SIMULATION_WORKERS = 1
