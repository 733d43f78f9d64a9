"""End-to-end command-line session on a small Lorenz-63 problem.

Runs generate -> train (two methods) -> evaluate -> compare -> sweep in a
temporary directory and prints each artifact directory.

Run: python3 demos/cli_walkthrough.py
"""

import subprocess
import sys
import tempfile
from pathlib import Path


def wpnode(*argv):
    print("$ wpnode", " ".join(argv), flush=True)
    subprocess.run([sys.executable, "-m", "wpnode", *argv], check=True)


work = Path(tempfile.mkdtemp(prefix="wpnode-"))
data = work / "data"
small = ["--hidden", "16", "--epochs", "20", "--samples", "2000"]

wpnode("generate", "--system", "l63", "--duration", "20", "--noise", "0.05", "--reference-duration", "100",
       "--out", str(data))
wpnode("train", "--preset", "l63-noise5-wp", "--data", str(data), "--out", str(work / "wp"), *small)
wpnode("train", "--preset", "l63-noise5-strong", "--data", str(data), "--out", str(work / "strong"),
       "--hidden", "16", "--epochs", "3", "--samples", "2000")
for run in ("wp", "strong"):
    wpnode("evaluate", "--checkpoint", str(work / run / "checkpoint.json"), "--data", str(data),
           "--n-starts", "10", "--kl-duration", "20")
wpnode("compare", str(work / "wp" / "checkpoint.json"), str(work / "strong" / "checkpoint.json"),
       "--out", str(work / "compare.csv"))
print((work / "compare.csv").read_text())
wpnode("sweep", "--axis", "p", "--values", "8,16", "--preset", "l63-noise5-wp", "--data", str(data),
       "--out", str(work / "sweep_p"), *small)
print((work / "sweep_p" / "sweep.csv").read_text())
for d in sorted(p for p in work.rglob("manifest.json")):
    print(d.relative_to(work))
