# Generated by Django 6.0.2 on 2026-10-19 09:12

import django.db.models.deletion
import django.utils.timezone
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='ExperimentRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('name', models.CharField(max_length=200)),
                ('config', models.JSONField(default=dict)),
                ('status', models.CharField(choices=[('complete', 'Complete'), ('partial', 'Partial')], default='complete', max_length=20)),
                ('mean_accuracy', models.FloatField(blank=True, null=True)),
                ('std_accuracy', models.FloatField(blank=True, null=True)),
                ('baseline_mean_accuracy', models.FloatField(blank=True, null=True)),
                ('output_dir', models.CharField(blank=True, default='', max_length=500)),
                ('created_at', models.DateTimeField(default=django.utils.timezone.now)),
            ],
            options={
                'ordering': ['-created_at', '-id'],
            },
        ),
        migrations.CreateModel(
            name='TrialResult',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('index', models.PositiveIntegerField()),
                ('seed', models.IntegerField()),
                ('accuracy', models.FloatField(blank=True, null=True)),
                ('baseline_accuracy', models.FloatField(blank=True, null=True)),
                ('n_domains', models.PositiveIntegerField(blank=True, null=True)),
                ('truncated', models.BooleanField(default=False)),
                ('residue_curve', models.JSONField(default=list)),
                ('error', models.TextField(blank=True, default='')),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='trials', to='adaptation.experimentrun')),
            ],
            options={
                'ordering': ['run', 'index'],
                'constraints': [models.UniqueConstraint(fields=('run', 'index'), name='unique_trial_per_run')],
            },
        ),
    ]
