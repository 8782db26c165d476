from django.core.management.base import BaseCommand

from adaptation.domain_path import AdaptConfig, adapt, save_path
from adaptation.numerics import read_matrix

from ._errors import command_errors


class Command(BaseCommand):
    help = 'Learn the common dictionary and the intermediate-domain path from source to target features.'

    def add_arguments(self, parser):
        parser.add_argument('--source', required=True, help='source Matrix file (.csv or binary)')
        parser.add_argument('--target', required=True, help='target Matrix file (.csv or binary)')
        parser.add_argument('--out', required=True, help='output directory for the path')
        parser.add_argument('--n', type=int, default=None, help='atoms per dictionary')
        parser.add_argument('--t', type=int, default=None, help='joint sparsity level')
        parser.add_argument('--lambda', dest='lam', type=float, default=None, help='incoherence weight')
        parser.add_argument('--eta', type=float, default=None, help='ridge weight of each dictionary step')
        parser.add_argument('--delta', type=float, default=None, help='stopping threshold, relative to ||D0||_F')
        parser.add_argument('--max-domains', type=int, default=None)
        parser.add_argument('--dict-iters', type=int, default=None)
        parser.add_argument('--seed', type=int, default=None)

    def handle(self, *args, **opts):
        with command_errors():
            cfg = AdaptConfig.from_settings(
                n=opts['n'],
                t=opts['t'],
                lam=opts['lam'],
                eta=opts['eta'],
                delta_stop=opts['delta'],
                max_domains=opts['max_domains'],
                dict_iters=opts['dict_iters'],
                seed=opts['seed'],
            )
            x_s = read_matrix(opts['source'])
            x_t = read_matrix(opts['target'])
            path = adapt(x_s, x_t, cfg)
            out = save_path(path, opts['out'])

        note = ' (truncated)' if path.truncated else ''
        self.stdout.write(self.style.SUCCESS(
            f'Path with {path.n_domains} steps{note}, final residue {path.final_residue_norm:.6g}, written to {out}'
        ))
