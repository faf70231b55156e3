"""
Django settings for transducerlab project.

The project has no web surface: Django provides the settings layer, the
management commands (gen, train, decode, align, sweep), the ORM for the
experiment ledger and the test runner.

For the full list of settings and their values, see
https://docs.djangoproject.com/en/5.2/ref/settings/
"""

import os
from pathlib import Path

from dotenv import load_dotenv

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# Load environment variables from .env file
load_dotenv(dotenv_path=BASE_DIR / '.env')


def _env_flag(name, default):
    value = os.environ.get(name)
    if value is None:
        return default
    return value.strip().lower() in ('1', 'true', 'yes', 'on')


# Never served; required by django.core.signing for completeness only.
SECRET_KEY = os.environ.get('DJANGO_SECRET_KEY', 'transducerlab-local-only')

DEBUG = _env_flag('DJANGO_DEBUG', False)

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'core',
]


# Database
# https://docs.djangoproject.com/en/5.2/ref/settings/#databases

DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': BASE_DIR / 'db.sqlite3',
    }
}

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

TIME_ZONE = 'UTC'

USE_TZ = True


# Transducer experiments

# Root for every relative path given to a management command.
TRANSDUCER_WORKDIR = Path(os.environ.get('TRANSDUCER_WORKDIR', BASE_DIR / 'runs'))

# Worker-pool size for per-utterance fan-out in decode/align.
TRANSDUCER_WORKERS = int(os.environ.get('TRANSDUCER_WORKERS', '1'))

# Append one ExperimentRun row per command invocation.
TRANSDUCER_RECORD_RUNS = _env_flag('TRANSDUCER_RECORD_RUNS', True)

TRANSDUCER_LOG_LEVEL = os.environ.get('TRANSDUCER_LOG_LEVEL', 'INFO')


# Logging
# https://docs.djangoproject.com/en/5.2/topics/logging/

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {
            'format': '{asctime} {levelname} {name} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'plain',
        },
    },
    'loggers': {
        'core': {
            'handlers': ['console'],
            'level': TRANSDUCER_LOG_LEVEL,
            'propagate': False,
        },
    },
}
