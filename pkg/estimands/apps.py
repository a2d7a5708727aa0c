from django.apps import AppConfig


class EstimandsConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'estimands'
    verbose_name = 'Estimand simulations'
