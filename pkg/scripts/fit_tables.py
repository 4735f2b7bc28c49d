"""Regenerate the golden PWL tables shipped in ``rnnaccel/data``."""

from pathlib import Path

from rnnaccel.activation import ActivationKind, _table_resource, build_table

DATA = Path(__file__).resolve().parents[1] / "src" / "rnnaccel" / "data"

if __name__ == "__main__":
    for fn in (ActivationKind.TANH, ActivationKind.SOFTSIGN):
        table = build_table(fn)
        path = DATA / _table_resource(fn)
        path.write_text(table.to_text())
        print(f"wrote {path}")
