from django.core.management.base import BaseCommand

from adaptation.domain_path import encode_target, load_path, path_features, recover_source
from adaptation.numerics import read_matrix, write_matrix

from ._errors import command_errors


class Command(BaseCommand):
    help = 'Encode features against a stored path and write the augmented representation.'

    def add_arguments(self, parser):
        parser.add_argument('--path', required=True, help='directory written by the adapt command')
        parser.add_argument('--input', required=True, help='Matrix file to encode')
        parser.add_argument('--side', required=True, choices=['source', 'target'])
        parser.add_argument('--out', required=True, help='output Matrix file')
        parser.add_argument('--t', type=int, default=None, help="sparsity level (defaults to the path's)")

    def handle(self, *args, **opts):
        with command_errors():
            path = load_path(opts['path'])
            t = opts['t'] or path.config.t
            x = read_matrix(opts['input'])
            if opts['side'] == 'source':
                recovered = recover_source(path, x, t)
                features = path_features(path, recovered.z_final, recovered.gamma_final)
            else:
                pair = encode_target(path, x, t)
                features = path_features(path, pair.z, pair.gamma)
            out = write_matrix(opts['out'], features)

        self.stdout.write(self.style.SUCCESS(
            f'{opts["side"]} features {features.shape[0]}x{features.shape[1]} written to {out}'
        ))
