"""
Stand-in external evaluator for backend tests

usage: mock_endpoint.py echo <error> | per-sample <count> | fail | garbage | sleep <seconds>
"""

import json
import sys
import time


def main(argv):
    request = json.loads(sys.stdin.readline())
    mode = argv[0]
    if mode == 'echo':
        print(json.dumps({'error': float(argv[1]), 'wall_ms': 3}))
    elif mode == 'per-sample':
        count = int(argv[1])
        samples = [100.0 if i % 4 == 0 else 0.0 for i in range(count)]
        print(json.dumps({'error': sum(samples) / max(count, 1), 'per_sample': samples, 'wall_ms': 1}))
    elif mode == 'fail':
        sys.stderr.write(f"cannot open {request['model_path']}\n")
        return 7
    elif mode == 'garbage':
        print("not json")
    elif mode == 'sleep':
        time.sleep(float(argv[1]))
        print(json.dumps({'error': 1.0, 'wall_ms': 0}))
    return 0


if __name__ == '__main__':
    sys.exit(main(sys.argv[1:]))
