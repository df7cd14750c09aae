"""Line-delimited JSON stub backend for subprocess tests.

Detect requests (any body with "prompts") get one fixed detection;
segment requests (body with "boxes") get one triangle polygon per box.
"""

import json
import sys


def main():
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        request = json.loads(line)
        if "prompts" in request:
            response = {
                "detections": [
                    {"bbox": [1.0, 2.0, 6.0, 7.0], "prompt_index": 0, "confidence": 0.9}
                ],
                "model": "stub-subprocess",
                "latency_ms": 0.1,
            }
        else:
            response = {
                "masks": [
                    {"polygon": [[0.0, 0.0], [5.0, 0.0], [5.0, 5.0]]}
                    for _ in request["boxes"]
                ],
                "model": "stub-subprocess",
                "latency_ms": 0.1,
            }
        sys.stdout.write(json.dumps(response) + "\n")
        sys.stdout.flush()


if __name__ == "__main__":
    main()
