/**
 * Quantitative Estimate of Drug-likeness.
 *
 * Weighted geometric mean of eight desirability functions (molecular weight,
 * logP, H-bond acceptors/donors, polar surface area, rotatable bonds,
 * aromatic rings, structural alerts), each an asymmetric double sigmoid with
 * the published parameterization. Result is in (0, 1).
 */

import { Descriptors, Mol, RDKitModule, countMatches } from "./rdkit";

// a, b, c, d, e, f, dmax per descriptor
const ADS_PARAMS: Record<string, [number, number, number, number, number, number, number]> = {
  MW: [2.817065973, 392.5754953, 290.7489764, 2.419764353, 49.22325677, 65.37051707, 104.9805561],
  ALOGP: [3.172690585, 137.8624751, 2.534937431, 4.581497897, 0.822739154, 0.576295591, 131.3186604],
  HBA: [2.948620388, 160.4605972, 3.615294657, 4.435986202, 0.290141953, 1.300669958, 148.7763046],
  HBD: [1.618662227, 1010.051101, 0.985094388, 0.000000001, 0.713820843, 0.920922555, 258.1632616],
  PSA: [1.876861559, 125.2232657, 62.90773554, 87.83366614, 12.01999824, 28.51324732, 104.5686167],
  ROTB: [0.01, 272.4121427, 2.558379970, 1.565547684, 1.271567166, 2.758063707, 105.4420403],
  AROM: [3.217788970, 957.7374108, 2.274627939, 0.000000001, 1.317690384, 0.375760881, 312.3372610],
  ALERTS: [0.01, 1199.094025, -0.09002883, 0.000000001, 0.185904477, 0.875193782, 417.7253140],
};

const WEIGHTS: Record<string, number> = {
  MW: 0.66, ALOGP: 0.46, HBA: 0.05, HBD: 0.61,
  PSA: 0.06, ROTB: 0.65, AROM: 0.48, ALERTS: 0.95,
};

/**
 * Structural alert patterns (compact catalog of classic reactive or
 * assay-interfering groups). Deliberately small and versioned here; the
 * count feeds the ALERTS desirability term and the FILTER verb.
 */
export const ALERT_SMARTS: ReadonlyArray<[string, string]> = [
  ["nitro", "[$([N+](=O)[O-]),$(N(=O)=O)]"],
  ["azide", "[$(N=[N+]=[N-]),$(NN#N)]"],
  ["diazo", "[N;!R]=[N;!R]"],
  ["isocyanate", "N=C=O"],
  ["isothiocyanate", "N=C=S"],
  ["thiocyanate", "SC#N"],
  ["acyl-halide", "C(=O)[F,Cl,Br,I]"],
  ["sulfonyl-halide", "S(=O)(=O)[F,Cl,Br,I]"],
  ["anhydride", "C(=O)OC(=O)"],
  ["peroxide", "[OX2][OX2]"],
  ["disulfide", "[SX2][SX2]"],
  ["thiol", "[SX2H]"],
  ["epoxide-aziridine", "[C,N]1CO1"],
  ["alpha-halo-ketone", "C(=O)C[F,Cl,Br,I]"],
  ["michael-acceptor", "[CX3]=[CX3]C(=O)[!O]"],
  ["hydrazine", "[NX3][NX3]"],
  ["quaternary-nitrogen", "[NX4+]"],
  ["aliphatic-long-chain", "[CH2][CH2][CH2][CH2][CH2][CH2][CH2][CH2]"],
  ["phosphorus-ester", "P(=O)(O)O"],
  ["aldehyde", "[CX3H1](=O)[#6]"],
];

function ads(x: number, p: [number, number, number, number, number, number, number]): number {
  const [a, b, c, d, e, f, dmax] = p;
  const raw = a + (b / (1 + Math.exp(-(x - c + d / 2) / e))) *
    (1 - 1 / (1 + Math.exp(-(x - c - d / 2) / f)));
  return raw / dmax;
}

export function countAlerts(RDKit: RDKitModule, mol: Mol): number {
  let hits = 0;
  for (const [, smarts] of ALERT_SMARTS) {
    if (countMatches(RDKit, mol, smarts) > 0) {
      hits += 1;
    }
  }
  return hits;
}

export function qed(RDKit: RDKitModule, mol: Mol, desc: Descriptors): number {
  const values: Record<string, number> = {
    MW: desc.amw,
    ALOGP: desc.CrippenClogP,
    HBA: desc.NumHBA,
    HBD: desc.NumHBD,
    PSA: desc.tpsa,
    ROTB: desc.NumRotatableBonds,
    AROM: desc.NumAromaticRings,
    ALERTS: countAlerts(RDKit, mol),
  };
  let weighted = 0;
  let weightSum = 0;
  for (const key of Object.keys(ADS_PARAMS)) {
    const d = Math.max(ads(values[key], ADS_PARAMS[key]), 1e-10);
    weighted += WEIGHTS[key] * Math.log(d);
    weightSum += WEIGHTS[key];
  }
  return Math.exp(weighted / weightSum);
}
