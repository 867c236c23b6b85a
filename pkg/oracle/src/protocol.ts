/**
 * Scorer line protocol: one request line in, exactly one reply line out.
 *
 *   SCORE_PLOGP <smiles>   -> float (penalized logP)
 *   SCORE_QED <smiles>     -> float in (0, 1)
 *   SCORE <smiles>         -> alias of SCORE_PLOGP
 *   CANON <smiles>         -> canonical SMILES string
 *   VALID <smiles>         -> 1 | 0 (sanitization success)
 *   SS <smiles>            -> 1 | 0 (mean bend-energy estimate > 0.82)
 *   FILTER <smiles>        -> 1 | 0 (structural alert catalog match)
 *   QUIT                   -> terminates the loop
 *
 * Unparsable SMILES reply "ERR parse"; unknown verbs reply "ERR verb".
 */

import { countAlerts, qed } from "./qed";
import { penalizedLogP } from "./plogp";
import { descriptors, parseMol, RDKitModule } from "./rdkit";
import { isStrained } from "./strain";

export const QUIT = Symbol("quit");

export function handleLine(RDKit: RDKitModule, line: string): string | typeof QUIT {
  const trimmed = line.trim();
  if (!trimmed) {
    return "ERR empty";
  }
  const space = trimmed.indexOf(" ");
  const verb = space < 0 ? trimmed : trimmed.slice(0, space);
  const payload = space < 0 ? "" : trimmed.slice(space + 1).trim();
  if (verb === "QUIT") {
    return QUIT;
  }
  const known = ["SCORE", "SCORE_PLOGP", "SCORE_QED", "CANON", "VALID", "SS", "FILTER"];
  if (!known.includes(verb)) {
    return "ERR verb";
  }
  const mol = parseMol(RDKit, payload);
  if (verb === "VALID") {
    const reply = mol ? "1" : "0";
    if (mol) mol.delete();
    return reply;
  }
  if (!mol) {
    return "ERR parse";
  }
  try {
    const desc = descriptors(mol);
    switch (verb) {
      case "SCORE":
      case "SCORE_PLOGP":
        return penalizedLogP(RDKit, mol, desc).toFixed(6);
      case "SCORE_QED":
        return qed(RDKit, mol, desc).toFixed(6);
      case "CANON":
        return mol.get_smiles();
      case "SS":
        return isStrained(RDKit, mol, desc) ? "1" : "0";
      case "FILTER":
        return countAlerts(RDKit, mol) > 0 ? "1" : "0";
      default:
        return "ERR verb";
    }
  } finally {
    mol.delete();
  }
}
