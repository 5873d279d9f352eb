'''Command line entry point: hessian-lab run | batch | validate.

Exit codes: 0 all assertions pass, 1 an assertion failed, 2 bad config,
3 numerical non-convergence.'''

import argparse
import copy
import csv
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

log = logging.getLogger('hessian_lab')

EXIT_OK, EXIT_ASSERT, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def _threads():
    try:
        n = int(os.environ.get('HESSIAN_LAB_THREADS', ''))
    except ValueError:
        return None
    return max(1, n)


def _cap_threads():
    n = os.environ.get('HESSIAN_LAB_THREADS')
    if n:
        for var in ('OMP_NUM_THREADS', 'OPENBLAS_NUM_THREADS', 'MKL_NUM_THREADS'):
            os.environ.setdefault(var, n)


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(cfg, pairs):
    '''--a.b value pairs set nested keys.'''
    cfg = copy.deepcopy(cfg)
    it = iter(pairs)
    for key in it:
        if not key.startswith('--'):
            raise ValueError('expected --key, got %r' % key)
        try:
            val = next(it)
        except StopIteration:
            raise ValueError('missing value for %s' % key) from None
        parts = key[2:].replace('-', '_').split('.')
        node = cfg
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ValueError('cannot set %s inside a scalar' % key)
        node[parts[-1]] = _parse_value(val)
    return cfg


def load_config(path, overrides=()):
    with open(path) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ValueError('config must be a JSON object')
    return apply_overrides(cfg, overrides)


def validate(cfg):
    '''Resolve defaults and check every field; raises ConfigError.'''
    from .scenarios import SCENARIOS, ConfigError, make_domain, solver_options
    cfg = copy.deepcopy(cfg)
    sc = cfg.get('scenario')
    if sc not in SCENARIOS:
        raise ConfigError('scenario must be one of %s' % ', '.join(SCENARIOS))
    cfg.setdefault('seed', 0)
    cfg.setdefault('output', 'out/%s' % sc)
    if not isinstance(cfg['seed'], int):
        raise ConfigError('seed must be an integer')
    if sc not in ('dini_check', 'iteration_lemma'):
        cfg.setdefault('domain', {'kind': 'ball', 'n': 1})
        cfg.setdefault('m', 1)
        cfg.setdefault('resolution', 33)
        try:
            make_domain(cfg)
            solver_options(cfg)
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from None
        if int(cfg['resolution']) < 9:
            raise ConfigError('resolution must be at least 9')
        dom = cfg['domain']
        if dom.get('kind') == 'custom':
            raise ConfigError('custom domains are library-only')
    for key in ('measure', 'boundary'):
        spec = cfg.get(key)
        if spec is not None and not isinstance(spec, dict):
            raise ConfigError('%s must be an object' % key)
    for name in ('rho_file',):
        if name in cfg and not Path(cfg[name]).exists():
            raise ConfigError('%s does not exist' % cfg[name])
    return cfg


def inputs_digest(cfg):
    blob = json.dumps({k: v for k, v in cfg.items() if k != 'output'}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def _jsonable(x):
    import numpy as np
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if isinstance(x, float) and x != x:
        return None
    return x


def _write_table(path, header, rows):
    with open(path, 'w', newline='') as fh:
        w = csv.writer(fh, lineterminator='\n')
        w.writerow(header)
        for row in rows:
            w.writerow(['%.17g' % v if isinstance(v, float) or hasattr(v, 'dtype') and v.dtype.kind == 'f'
                        else v for v in row])


def _write_figure(path, draw):
    import matplotlib
    matplotlib.use('Agg')
    import matplotlib.pyplot as plt
    fig, ax = plt.subplots(figsize=(5, 4))
    draw(ax)
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata={'Software': None})
    plt.close(fig)


def run(cfg, write=True):
    '''Run one resolved config; returns (exit code, summary dict).'''
    from .scenarios import RUNNERS, ConfigError, NonConvergence
    import numpy as np
    try:
        cfg = validate(cfg)
    except ConfigError as e:
        return EXIT_CONFIG, {'error': str(e)}
    np.random.seed(cfg['seed'])
    summary = {'scenario': cfg['scenario'], 'inputs_digest': inputs_digest(cfg), 'seed': cfg['seed']}
    try:
        outcome = RUNNERS[cfg['scenario']](cfg)
    except ConfigError as e:
        return EXIT_CONFIG, dict(summary, error=str(e))
    except NonConvergence as e:
        code, outcome = EXIT_NUMERIC, None
        summary['error'] = str(e)
    else:
        code = EXIT_OK if all(outcome.checks.values()) else EXIT_ASSERT
        summary['key_metrics'] = _jsonable(outcome.metrics)
        summary['assertions'] = {k: bool(v) for k, v in outcome.checks.items()}
    summary['passed'] = code == EXIT_OK
    if write:
        out = Path(cfg['output'])
        out.mkdir(parents=True, exist_ok=True)
        if outcome is not None:
            for name, (header, rows) in outcome.tables.items():
                _write_table(out / name, header, rows)
            for name, draw in outcome.figures:
                _write_figure(out / name, draw)
        with open(out / 'summary.json', 'w') as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write('\n')
    return code, summary


def _run_path(args):
    path, overrides = args
    try:
        cfg = load_config(path, overrides)
    except (OSError, ValueError) as e:
        return str(path), EXIT_CONFIG, {'error': str(e)}
    code, summary = run(cfg)
    return str(path), code, summary


def _report(code, summary, stream=None):
    stream = stream or sys.stdout
    for name, ok in (summary.get('assertions') or {}).items():
        print('%-28s %s' % (name, 'pass' if ok else 'FAIL'), file=stream)
    if 'error' in summary:
        print('error: %s' % summary['error'], file=stream)
    print('exit %d' % code, file=stream)


def main(argv=None):
    _cap_threads()
    parser = argparse.ArgumentParser(prog='hessian-lab', description=__doc__.split('\n')[0])
    parser.add_argument('-v', '--verbose', action='store_true')
    sub = parser.add_subparsers(dest='command', required=True)
    p_run = sub.add_parser('run', help='run one scenario config')
    p_run.add_argument('config')
    p_batch = sub.add_parser('batch', help='run every *.json config in a directory')
    p_batch.add_argument('directory')
    p_batch.add_argument('--jobs', type=int, default=1)
    p_val = sub.add_parser('validate', help='check a config and print it resolved')
    p_val.add_argument('config')
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format='%(levelname)s %(name)s: %(message)s')

    if args.command == 'batch':
        paths = sorted(Path(args.directory).glob('*.json'))
        if not paths:
            print('no configs in %s' % args.directory, file=sys.stderr)
            return EXIT_CONFIG
        jobs = max(1, args.jobs)
        if _threads():
            jobs = min(jobs, _threads())
        work = [(p, extra) for p in paths]
        if jobs == 1:
            results = [_run_path(w) for w in work]
        else:
            with ProcessPoolExecutor(max_workers=jobs) as ex:
                results = list(ex.map(_run_path, work))
        worst = EXIT_OK
        for path, code, summary in results:
            print('%s: exit %d' % (path, code))
            worst = max(worst, code)
        return worst

    try:
        cfg = load_config(args.config, extra)
    except (OSError, ValueError) as e:
        print('config error: %s' % e, file=sys.stderr)
        return EXIT_CONFIG
    if args.command == 'validate':
        from .scenarios import ConfigError
        try:
            resolved = validate(cfg)
        except ConfigError as e:
            print('config error: %s' % e, file=sys.stderr)
            return EXIT_CONFIG
        print(json.dumps(dict(resolved, inputs_digest=inputs_digest(resolved)), indent=2, sort_keys=True))
        return EXIT_OK
    code, summary = run(cfg)
    _report(code, summary)
    return code


if __name__ == '__main__':
    sys.exit(main())
