from pathlib import Path

from django.core.management.base import BaseCommand

from adaptation.pipeline import (
    ExperimentConfig,
    record_report,
    run_experiment,
    sensitivity_sweep,
    write_report,
    write_sensitivity,
)

from ._errors import command_errors


class Command(BaseCommand):
    help = 'Run a seeded adaptation experiment and write report.json, residue.csv and accuracy.csv.'

    def add_arguments(self, parser):
        parser.add_argument('--config', required=True, help='experiment JSON file')
        parser.add_argument('--out', required=True, help='output directory')
        parser.add_argument('--record', action='store_true', help='also store the run in the database')
        parser.add_argument('--name', default=None, help='run name when recording (defaults to the config file stem)')
        parser.add_argument('--sweep', action='store_true', help='also run the eta x atoms sensitivity grid')

    def handle(self, *args, **opts):
        with command_errors():
            cfg = ExperimentConfig.load(opts['config'])
            report = run_experiment(cfg)
            out = write_report(report, opts['out'])
            if opts['sweep']:
                write_sensitivity(sensitivity_sweep(cfg), out / 'sensitivity.csv')

        if opts['record']:
            run = record_report(report, opts['name'] or Path(opts['config']).stem, out)
            self.stdout.write(f'Recorded run #{run.pk}')

        mean = report.mean_accuracy
        baseline = report.baseline_mean
        summary = (
            f'accuracy {mean:.4f}' if mean is not None else 'no successful trial'
        ) + (f', baseline {baseline:.4f}' if baseline is not None else '')
        if report.partial:
            self.stdout.write(self.style.WARNING(f'Partial report ({summary}) written to {out}'))
        else:
            self.stdout.write(self.style.SUCCESS(f'Report ({summary}) written to {out}'))
