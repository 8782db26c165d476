from django.apps import AppConfig


class AdaptationConfig(AppConfig):
    name = 'adaptation'
    default_auto_field = 'django.db.models.BigAutoField'
