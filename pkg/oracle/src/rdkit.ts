import type { JSMol, RDKitLoader, RDKitModule } from "@rdkit/rdkit";

// the runtime default export is the loader; the published typings only
// declare it on globalThis, so cast the require explicitly
// eslint-disable-next-line @typescript-eslint/no-var-requires
const initRDKitModule = require("@rdkit/rdkit") as RDKitLoader;

export type { RDKitModule };
export type Mol = JSMol;

let modulePromise: Promise<RDKitModule> | null = null;

export function rdkit(): Promise<RDKitModule> {
  if (!modulePromise) {
    modulePromise = initRDKitModule();
  }
  return modulePromise;
}

export interface Descriptors {
  amw: number;
  CrippenClogP: number;
  NumHBA: number;
  NumHBD: number;
  tpsa: number;
  NumRotatableBonds: number;
  NumAromaticRings: number;
  NumHeavyAtoms: number;
  NumSpiroAtoms: number;
  NumBridgeheadAtoms: number;
  NumAtomStereoCenters: number;
  NumRings: number;
}

/** Parse and sanitize; returns null when RDKit rejects the molecule. */
export function parseMol(RDKit: RDKitModule, smiles: string): Mol | null {
  try {
    const mol = RDKit.get_mol(smiles);
    if (!mol || !mol.is_valid()) {
      if (mol) mol.delete();
      return null;
    }
    return mol;
  } catch {
    return null;
  }
}

export function descriptors(mol: Mol): Descriptors {
  return JSON.parse(mol.get_descriptors()) as Descriptors;
}

/** Number of substructure matches for a SMARTS pattern. */
export function countMatches(RDKit: RDKitModule, mol: Mol, smarts: string): number {
  const query = RDKit.get_qmol(smarts);
  if (!query) return 0;
  try {
    const raw = mol.get_substruct_matches(query);
    const matches = JSON.parse(raw === "" ? "[]" : raw);
    return Array.isArray(matches) ? matches.length : 0;
  } finally {
    query.delete();
  }
}

/** Size of the largest ring, probed with exact ring-size SMARTS (capped). */
export function largestRingSize(RDKit: RDKitModule, mol: Mol, cap = 24): number {
  for (let size = cap; size >= 3; size--) {
    if (countMatches(RDKit, mol, `[r${size}]`) > 0) {
      return size;
    }
  }
  return 0;
}
