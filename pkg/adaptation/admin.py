from django.contrib import admin
from .models import ExperimentRun, TrialResult

admin.site.register(ExperimentRun)
admin.site.register(TrialResult)
