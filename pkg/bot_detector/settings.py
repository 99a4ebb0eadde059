import os
from pathlib import Path

from dotenv import load_dotenv
import dj_database_url
import rollbar

load_dotenv()

BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = os.getenv("SECRET_KEY", "django-insecure-default-key")
DEBUG = os.getenv("DEBUG", "True").lower() == "true"

INSTALLED_APPS = [
    'bot_detector',
]

DEFAULT_DB_URL = f"sqlite:///{BASE_DIR / 'db.sqlite3'}"

DATABASES = {
    'default': dj_database_url.parse(
        os.getenv("DATABASE_URL", DEFAULT_DB_URL),
        conn_max_age=600,
    )
}

LANGUAGE_CODE = 'en-us'
TIME_ZONE = 'UTC'
USE_I18N = False
USE_TZ = True

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

# Defaults for the detection pipeline; config files and command flags
# take precedence over these.
PIPELINE_DEFAULTS = {
    'seed': int(os.getenv("BOTDETECT_SEED", "42")),
    'output_dir': os.getenv("BOTDETECT_OUTPUT_DIR", "artifacts"),
    'epochs': int(os.getenv("BOTDETECT_EPOCHS", "250")),
}

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {
            'format': '%(asctime)s %(levelname)s %(name)s: %(message)s',
        },
    },
    'handlers': {
        'stderr': {
            'class': 'logging.StreamHandler',
            'stream': 'ext://sys.stderr',
            'formatter': 'plain',
        },
    },
    'loggers': {
        'bot_detector': {
            'handlers': ['stderr'],
            'level': os.getenv("LOG_LEVEL", "INFO"),
            'propagate': True,
        },
    },
}

ROLLBAR = {
    'access_token': os.getenv("ROLLBAR_ACCESS_TOKEN", ""),
    'environment': 'development' if DEBUG else 'production',
    'root': BASE_DIR,
}

rollbar.init(
    access_token=ROLLBAR['access_token'],
    environment=ROLLBAR['environment'],
    root=str(ROLLBAR['root']),
    enabled=bool(ROLLBAR['access_token']),
)
