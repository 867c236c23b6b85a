import * as readline from "readline";

import { handleLine, QUIT } from "./protocol";
import { rdkit } from "./rdkit";

async function main(): Promise<void> {
  const RDKit = await rdkit();
  const rl = readline.createInterface({ input: process.stdin, terminal: false });
  rl.on("line", (line) => {
    const reply = handleLine(RDKit, line);
    if (reply === QUIT) {
      rl.close();
      process.exit(0);
    }
    process.stdout.write(reply + "\n");
  });
  rl.on("close", () => process.exit(0));
}

main().catch((err) => {
  process.stderr.write(`fatal: ${err}\n`);
  process.exit(1);
});
