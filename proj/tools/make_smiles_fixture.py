#!/usr/bin/env python3
"""Freeze atom/bond/hydrogen counts for a SMILES corpus using RDKit.

Run once during development; the output CSV is checked in under tests/data and
consumed by the parser fixture test. RDKit is only needed to regenerate it.

    python3 tools/make_smiles_fixture.py -o tests/data/smiles_fixture.csv
"""
import argparse
import csv
import os

from rdkit import Chem, RDLogger

SUPPORTED = {
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al", "Si", "P", "S", "Cl",
    "Ar", "Ca", "Ti", "V", "Ni", "Cu", "Zn", "Ga", "Ge", "As", "Se", "Br", "Kr", "I",
}


def sources():
    import rdkit
    root = os.path.dirname(rdkit.__file__)
    yield os.path.join(root, "Data", "NCI", "first_5K.smi")
    yield os.path.join(root, "Contrib", "FreeWilson", "data", "CHEMBL2321810.smi")


def read_smiles(path):
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if parts and parts[0].lower() != "smiles":
                yield parts[0]


def oracle(smi):
    params = Chem.SmilesParserParams()
    params.removeHs = False
    mol = Chem.MolFromSmiles(smi, params)
    if mol is None:
        return None
    for atom in mol.GetAtoms():
        if atom.GetSymbol() not in SUPPORTED or atom.GetIsotope() != 0:
            return None
    hs = [atom.GetTotalNumHs() for atom in mol.GetAtoms()]
    return mol, mol.GetNumAtoms(), mol.GetNumBonds(), hs


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("-o", "--output", required=True)
    ap.add_argument("-n", "--count", type=int, default=1000)
    args = ap.parse_args()
    RDLogger.DisableLog("rdApp.*")

    rows = []
    seen = set()
    for path in sources():
        for smi in read_smiles(path):
            if len(rows) >= args.count:
                break
            first = oracle(smi)
            if first is None:
                continue
            # Alternate between the file's own (mostly Kekule) spelling and
            # RDKit's aromatic canonical spelling of the same molecule.
            text = smi if len(rows) % 2 == 0 else Chem.MolToSmiles(first[0])
            if text in seen:
                continue
            res = oracle(text)
            if res is None:
                continue
            seen.add(text)
            _, atoms, bonds, hs = res
            rows.append((text, atoms, bonds, sum(hs), ";".join(map(str, hs))))

    with open(args.output, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["smiles", "heavy_atoms", "bonds", "hydrogens", "per_atom_h"])
        w.writerows(rows)
    print(f"wrote {len(rows)} molecules to {args.output}")


if __name__ == "__main__":
    main()
