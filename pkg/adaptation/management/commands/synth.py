from django.core.management.base import BaseCommand

from adaptation.domain_synth import make_toy_dataset, write_dataset
from adaptation.pipeline import TARGET_SAMPLE_SEED, ShiftSpec

from ._errors import command_errors


class Command(BaseCommand):
    help = 'Write a seeded toy dataset, or a source/target pair under a blur or affine shift.'

    def add_arguments(self, parser):
        parser.add_argument('--kind', required=True, choices=['toy', 'gaussian', 'motion', 'affine'])
        parser.add_argument('--out', required=True, help='output directory')
        parser.add_argument('--classes', type=int, default=10)
        parser.add_argument('--per-class', type=int, default=30)
        parser.add_argument('--height', type=int, default=16)
        parser.add_argument('--width', type=int, default=16)
        parser.add_argument('--sigma', type=float, default=3.0)
        parser.add_argument('--length', type=int, default=9)
        parser.add_argument('--theta', type=float, default=135.0)
        parser.add_argument('--mix', type=float, default=0.3)
        parser.add_argument('--offset', type=float, default=0.1)
        parser.add_argument('--seed', type=int, default=0)

    def handle(self, *args, **opts):
        with command_errors():
            shape = (opts['classes'], opts['per_class'], opts['height'], opts['width'])
            source = make_toy_dataset(*shape, opts['seed'])
            if opts['kind'] == 'toy':
                images, _ = write_dataset(opts['out'], source, stem='images')
                self.stdout.write(self.style.SUCCESS(f'{source.count} images written to {images}'))
                return

            shift = ShiftSpec(
                kind=opts['kind'],
                sigma=opts['sigma'],
                length=opts['length'],
                theta=opts['theta'],
                mix=opts['mix'],
                offset=opts['offset'],
            )
            target = shift.apply(make_toy_dataset(*shape, opts['seed'], sample_seed=TARGET_SAMPLE_SEED), opts['seed'])
            src_path, _ = write_dataset(opts['out'], source, stem='source')
            tgt_path, _ = write_dataset(opts['out'], target, stem='target')

        self.stdout.write(self.style.SUCCESS(f'Source {src_path} and {opts["kind"]} target {tgt_path} written'))
