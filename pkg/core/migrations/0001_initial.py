# Generated by Django 5.2.8

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
                ('command', models.CharField(help_text='Management command name', max_length=20)),
                ('seed', models.IntegerField(default=0)),
                ('workdir', models.CharField(help_text='Directory the outputs were written to', max_length=500)),
                ('arguments', models.JSONField(default=dict, help_text='Command options as passed')),
                ('metrics', models.JSONField(default=dict, help_text='Headline numbers (ter, loss, ...)')),
                ('report', models.TextField(blank=True)),
                ('created_at', models.DateTimeField(default=django.utils.timezone.now)),
            ],
            options={
                'verbose_name': 'Experiment Run',
                'verbose_name_plural': 'Experiment Runs',
                'ordering': ['-created_at'],
            },
        ),
    ]
