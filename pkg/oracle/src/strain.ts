/**
 * Steric-strain flag: 1 when the mean angle-bend energy estimate exceeds a
 * threshold (kcal/mol).
 *
 * The WASM build exposes no 3D embedding or force field, so bend energy is
 * estimated from ring geometry: atoms in 3- and 4-membered rings carry the
 * textbook ring-strain energies of cyclopropane/cyclobutane (27.5 and 26.3
 * kcal/mol per ring), spread over all heavy-atom bond angles.
 */

import { Descriptors, Mol, RDKitModule, countMatches } from "./rdkit";

const RING3_STRAIN = 27.5;
const RING4_STRAIN = 26.3;

export function meanBendEnergy(RDKit: RDKitModule, mol: Mol, desc: Descriptors): number {
  const atoms3 = countMatches(RDKit, mol, "[r3]");
  const atoms4 = countMatches(RDKit, mol, "[r4]");
  const rings3 = atoms3 / 3;
  const rings4 = atoms4 / 4;
  const totalStrain = rings3 * RING3_STRAIN + rings4 * RING4_STRAIN;
  if (totalStrain === 0) {
    return 0;
  }
  // heavy-atom angle count: sum over atoms of deg*(deg-1)/2, approximated
  // from the bond count (each bond contributes to two atoms' degrees)
  const bonds = Math.max(1, countMatches(RDKit, mol, "[*]~[*]") / 2);
  const angles = Math.max(1, bonds - 1 + (desc.NumRings ?? 0));
  return totalStrain / angles;
}

export function isStrained(RDKit: RDKitModule, mol: Mol, desc: Descriptors,
                           threshold = 0.82): boolean {
  return meanBendEnergy(RDKit, mol, desc) > threshold;
}
