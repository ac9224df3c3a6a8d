"""Atomic file output: write to a temp file in the same directory, then rename."""

import csv
import io
import json
import os
import tempfile


def _default_mode():
    # mkstemp creates 0600 files; match what a plain open() would give
    umask = os.umask(0)
    os.umask(umask)
    return 0o666 & ~umask


def atomic_write_text(path, text):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.chmod(tmp, _default_mode())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_json(path, doc):
    atomic_write_text(path, json.dumps(doc, indent=1) + "\n")


def csv_text(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def atomic_write_csv(path, header, rows):
    atomic_write_text(path, csv_text(header, rows))


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
