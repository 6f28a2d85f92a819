from django.apps import AppConfig


class TreeWalksConfig(AppConfig):
    name = 'TreeWalks'
