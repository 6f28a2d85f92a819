"""
Django settings for the tree potential lab.

The project has no HTTP surface: Django provides the settings layer, the
management commands (`identities`, `lemmas`, `fatou`, `simulate`) and the
test runner. Every tunable below can be overridden from the environment or
from a `.env` file at the project root.
"""

import os
from pathlib import Path

from dotenv import load_dotenv

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent
load_dotenv(BASE_DIR / '.env')


def _env_flag(name: str, default: bool = False) -> bool:
    raw_value = os.getenv(name)
    if raw_value is None:
        return default
    return raw_value.strip().lower() in {'1', 'true', 'yes', 'on'}


def _env_int(name: str, default: int) -> int:
    raw_value = str(os.getenv(name, '') or '').strip()
    if not raw_value:
        return default
    return int(raw_value)


def _env_float(name: str, default: float) -> float:
    raw_value = str(os.getenv(name, '') or '').strip()
    if not raw_value:
        return default
    return float(raw_value)


# SECURITY WARNING: the key only signs nothing here, but Django requires one.
SECRET_KEY = os.getenv('DJANGO_SECRET_KEY', 'django-insecure-local-dev-only')

DEBUG = _env_flag('DJANGO_DEBUG', default=False)

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'django.contrib.auth',
    'rest_framework',
    'TreeWalks',
    'experiments',
]

# Nothing is persisted; the database only satisfies Django's startup checks.
DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': BASE_DIR / 'db.sqlite3',
    }
}

LANGUAGE_CODE = 'pt-br'

TIME_ZONE = 'America/Sao_Paulo'

USE_I18N = True

USE_TZ = True

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

REST_FRAMEWORK = {
    'DEFAULT_AUTHENTICATION_CLASSES': [],
    'DEFAULT_PERMISSION_CLASSES': [],
    'UNAUTHENTICATED_USER': None,
}

LOG_LEVEL = os.getenv('DJANGO_LOG_LEVEL', 'INFO').strip().upper() or 'INFO'

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {
            'format': '%(asctime)s %(levelname)s %(name)s: %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'plain',
        },
    },
    'loggers': {
        'TreeWalks': {'handlers': ['console'], 'level': LOG_LEVEL, 'propagate': False},
        'experiments': {'handlers': ['console'], 'level': LOG_LEVEL, 'propagate': False},
    },
}


# Experiments

EXPERIMENTS_OUTPUT_DIR = Path(str(os.getenv('EXPERIMENTS_OUTPUT_DIR') or (BASE_DIR / 'runs')))
EXPERIMENTS_DEFAULT_CONFIG = BASE_DIR / 'experiments' / 'fixtures' / 'default_config.json'
FATOU_FUNCTION_SUITE = BASE_DIR / 'experiments' / 'fixtures' / 'fatou_functions.json'

# Worker processes for Monte Carlo batches. Results are reduced in stream
# order, so any value yields identical reports.
SIMULATION_WORKERS = max(1, _env_int('SIMULATION_WORKERS', 1))

# Bracket solver: budget of directed-edge evaluations per table.
POTENTIAL_MAX_EVALUATIONS = _env_int('POTENTIAL_MAX_EVALUATIONS', 5_000_000)

# Restricted Green functions and exit laws.
GREEN_DIRECT_SOLVE_LIMIT = _env_int('GREEN_DIRECT_SOLVE_LIMIT', 5000)
GREEN_MAX_VERTICES = _env_int('GREEN_MAX_VERTICES', 400_000)
NEUMANN_RESIDUAL_TOL = _env_float('NEUMANN_RESIDUAL_TOL', 1e-12)
NEUMANN_MAX_ITERATIONS = _env_int('NEUMANN_MAX_ITERATIONS', 100_000)
