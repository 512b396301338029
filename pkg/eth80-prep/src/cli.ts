#!/usr/bin/env node
/** eth80-prep --archive DIR --out DIR
 *
 * Converts an extracted ETH-80 image archive into one GBTD tensor
 * container per object plus labels.json and manifest.json. Exit codes:
 * 0 success, 2 bad invocation, 3 bad archive data.
 */

import * as fs from "node:fs";
import { pathToFileURL } from "node:url";
import { parseArgs } from "node:util";

import { EXPECTED_OBJECTS, convertArchive } from "./convert.js";
import { Eth80PrepError } from "./errors.js";

const USAGE = "usage: eth80-prep --archive DIR --out DIR";

export function runCli(
  argv: string[],
  out: (line: string) => void = (l) => process.stdout.write(l + "\n"),
  err: (line: string) => void = (l) => process.stderr.write(l + "\n"),
): number {
  let parsed;
  try {
    parsed = parseArgs({
      args: argv,
      options: {
        archive: { type: "string" },
        out: { type: "string" },
        help: { type: "boolean", short: "h" },
      },
      strict: true,
    });
  } catch (exc) {
    err(exc instanceof Error ? exc.message : String(exc));
    err(USAGE);
    return 2;
  }
  if (parsed.values.help) {
    out(USAGE);
    out("");
    out("Emits one (41, 16384, 3) float64 container per object: 41 views,");
    out("128x128 pixels vectorized column-major, RGB intensities in [0, 1].");
    return 0;
  }
  const { archive, out: outDir } = parsed.values;
  if (!archive || !outDir) {
    err(USAGE);
    return 2;
  }
  if (!fs.existsSync(archive) || !fs.statSync(archive).isDirectory()) {
    err(`eth80-prep: ${archive} is not a directory`);
    return 2;
  }
  let result;
  try {
    result = convertArchive(archive, outDir, out);
  } catch (exc) {
    if (exc instanceof Eth80PrepError) {
      err(`eth80-prep: ${exc.message}`);
      return 3;
    }
    throw exc;
  }
  const n = result.objects.length;
  out(`wrote ${n} containers + labels.json + manifest.json to ${result.outDir}`);
  if (n !== EXPECTED_OBJECTS) {
    err(`warning: expected ${EXPECTED_OBJECTS} objects (8 categories x 10), found ${n}`);
  }
  return 0;
}

function invokedDirectly(): boolean {
  const entry = process.argv[1];
  if (entry === undefined) return false;
  try {
    return import.meta.url === pathToFileURL(fs.realpathSync(entry)).href;
  } catch {
    return false;
  }
}

if (invokedDirectly()) {
  process.exit(runCli(process.argv.slice(2)));
}
