# Copyright 2026 The DirMoE Authors. All Rights Reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
# ==============================================================================
"""Runs a short training for each router kind and validates summary.json."""

import json
import subprocess
import sys
import tempfile
from pathlib import Path

import jsonschema


def main(cli: str, config: str, schema_path: str) -> int:
    schema = json.loads(Path(schema_path).read_text())
    jsonschema.Draft202012Validator.check_schema(schema)
    validator = jsonschema.Draft202012Validator(schema)
    failures = 0
    for kind in ("dirmoe", "topk_softmax"):
        with tempfile.TemporaryDirectory() as out:
            subprocess.run(
                [cli, "train", "--config", config, "--out-dir", out,
                 "--set", "train.steps=20", "--set", f"router.kind={kind}"],
                check=True, stdout=subprocess.DEVNULL)
            summary = json.loads((Path(out) / "summary.json").read_text())
            errors = sorted(validator.iter_errors(summary), key=lambda e: list(e.path))
            for e in errors:
                print(f"{kind}: {'/'.join(map(str, e.path))}: {e.message}")
            failures += len(errors)
            print(f"{kind}: {'valid' if not errors else 'INVALID'}")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main(*sys.argv[1:4]))
