import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

const here = dirname(fileURLToPath(import.meta.url));

export function fixture<T>(name: string): T {
  const raw = readFileSync(join(here, "fixtures", `${name}.json`), "utf8");
  return JSON.parse(raw) as T;
}

export function fixtureRaw(name: string): string {
  return readFileSync(join(here, "fixtures", `${name}.json`), "utf8");
}
