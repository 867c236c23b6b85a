/**
 * Penalized logP: Crippen logP reduced by a synthetic-accessibility estimate
 * and a large-ring penalty.
 *
 * The synthetic-accessibility term uses the structural-complexity components
 * (size, stereo centers, spiro and bridgehead atoms, macrocycles); the
 * fragment-frequency contribution of the full published score needs a
 * fragment database that is not redistributable here, so it is omitted and
 * the result documented as an estimate.
 */

import { Descriptors, Mol, RDKitModule, countMatches, largestRingSize } from "./rdkit";

export function saEstimate(RDKit: RDKitModule, mol: Mol, desc: Descriptors): number {
  const n = Math.max(1, desc.NumHeavyAtoms);
  const sizePenalty = Math.pow(n, 1.005) - n;
  const stereoPenalty = Math.log10(desc.NumAtomStereoCenters + 1);
  const spiroPenalty = Math.log10(desc.NumSpiroAtoms + 1);
  const bridgePenalty = Math.log10(desc.NumBridgeheadAtoms + 1);
  const macrocyclePenalty = largestRingSize(RDKit, mol) > 8 ? Math.log10(2) : 0;
  const complexity = sizePenalty + stereoPenalty + spiroPenalty + bridgePenalty + macrocyclePenalty;
  // map onto the conventional 1 (easy) .. 10 (hard) scale
  return Math.min(10, 1 + 2.25 * complexity);
}

export function cyclePenalty(RDKit: RDKitModule, mol: Mol): number {
  const largest = largestRingSize(RDKit, mol);
  return Math.max(0, largest - 6);
}

export function penalizedLogP(RDKit: RDKitModule, mol: Mol, desc: Descriptors): number {
  return desc.CrippenClogP - saEstimate(RDKit, mol, desc) - cyclePenalty(RDKit, mol);
}
