#!/usr/bin/env python3
"""Assemble a plain-text English corpus from public-domain datasets.

The sources are fetched from the npm and PyPI registries:

  * @stdlib/datasets-sotu          State of the Union addresses 1790-2018
  * @stdlib/datasets-moby-dick     Moby Dick (Project Gutenberg text)
  * @stdlib/datasets-spam-assassin SpamAssassin public mail corpus (bodies only)
  * world-english-bible            World English Bible (public domain)
  * wordnet-db                     WordNet 3.1 glosses and usage examples
  * shakespeare (PyPI)             Shakespeare and Milton plain texts

Usage: build_english_corpus.py OUTPUT [WORKDIR]
"""

import email
import glob
import json
import os
import re
import subprocess
import sys
import tarfile

NPM_PACKAGES = [
    "@stdlib/datasets-sotu",
    "@stdlib/datasets-moby-dick",
    "@stdlib/datasets-spam-assassin",
    "world-english-bible",
    "wordnet-db",
]


def fetch(workdir):
    os.makedirs(workdir, exist_ok=True)
    for pkg in NPM_PACKAGES:
        name = pkg.lstrip("@").replace("/", "-")
        target = os.path.join(workdir, name)
        if os.path.isdir(target):
            continue
        out = subprocess.check_output(["npm", "pack", pkg], cwd=workdir, text=True)
        tgz = os.path.join(workdir, out.strip().splitlines()[-1])
        with tarfile.open(tgz) as tf:
            tf.extractall(target)
    shakespeare = os.path.join(workdir, "shakespeare")
    if not os.path.isdir(shakespeare):
        subprocess.check_call(
            ["pip", "download", "shakespeare", "--no-deps", "-q", "-d", workdir]
        )
        tgz = glob.glob(os.path.join(workdir, "shakespeare-*.tar.gz"))[0]
        with tarfile.open(tgz) as tf:
            tf.extractall(shakespeare)


def read(path):
    with open(path, "rb") as fh:
        return fh.read().decode("utf-8", errors="replace")


def sotu(workdir):
    for path in sorted(glob.glob(f"{workdir}/stdlib-datasets-sotu/package/data/*.txt")):
        yield read(path)


def moby(workdir):
    yield read(f"{workdir}/stdlib-datasets-moby-dick/package/data/data.txt")


BASE64_LINE = re.compile(r"^[A-Za-z0-9+/=]{40,}$")
TAG = re.compile(r"<[^>]{0,200}>")


def mail(workdir):
    root = f"{workdir}/stdlib-datasets-spam-assassin/package/data"
    for path in sorted(glob.glob(f"{root}/*/*.txt")):
        msg = email.message_from_string(read(path))
        for part in msg.walk():
            if part.get_content_maintype() != "text":
                continue
            payload = part.get_payload(decode=True)
            if not payload:
                continue
            body = payload.decode("utf-8", errors="replace")
            if part.get_content_subtype() == "html":
                body = TAG.sub(" ", body)
            lines = [l for l in body.splitlines() if not BASE64_LINE.match(l.strip())]
            yield "\n".join(lines)


def bible(workdir):
    root = f"{workdir}/world-english-bible/package/json"
    for path in sorted(glob.glob(f"{root}/*.json")):
        with open(path, encoding="utf-8") as fh:
            items = json.load(fh)
        parts = []
        for item in items:
            if "value" in item:
                parts.append(item["value"].strip())
            elif item.get("type") == "paragraph end":
                parts.append("\n")
        yield " ".join(parts)


def wordnet(workdir):
    root = f"{workdir}/wordnet-db/package/dict"
    for kind in ("noun", "verb", "adj", "adv"):
        with open(f"{root}/data.{kind}", encoding="utf-8", errors="replace") as fh:
            lines = []
            for line in fh:
                if line.startswith("  ") or "|" not in line:
                    continue
                gloss = line.split("|", 1)[1].strip()
                lines.append(gloss.replace('"', "").replace(";", "."))
            yield "\n".join(lines)


def shakespeare(workdir):
    for path in sorted(glob.glob(f"{workdir}/shakespeare/*/*/texts/*.txt")):
        if os.path.basename(path) == "metadata.txt":
            continue
        yield read(path)


def main():
    if len(sys.argv) < 2:
        sys.exit(__doc__)
    output = sys.argv[1]
    workdir = sys.argv[2] if len(sys.argv) > 2 else os.path.join(
        os.path.dirname(os.path.abspath(output)), "corpus-src"
    )
    fetch(workdir)
    total = 0
    with open(output, "w", encoding="utf-8", newline="\n") as out:
        for source in (sotu, moby, mail, bible, wordnet, shakespeare):
            size = 0
            for doc in source(workdir):
                doc = doc.replace("\r\n", "\n").replace("\x00", "")
                out.write(doc.strip() + "\n\n")
                size += len(doc.encode("utf-8"))
            print(f"{source.__name__:12s} {size / 1e6:8.2f} MB", file=sys.stderr)
            total += size
    print(f"{'total':12s} {total / 1e6:8.2f} MB -> {output}", file=sys.stderr)


if __name__ == "__main__":
    main()
