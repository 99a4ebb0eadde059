from django.apps import AppConfig


class BotDetectorConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'bot_detector'
    verbose_name = 'Bot detector'
