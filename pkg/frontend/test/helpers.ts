import { readFileSync, writeFileSync, existsSync, mkdirSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

// compiled tests run from dist/test/, sources live in test/
const HERE = dirname(fileURLToPath(import.meta.url));
export const FIXTURES = join(HERE, "..", "..", "test", "fixtures");
export const SNAPSHOTS = join(HERE, "..", "..", "test", "snapshots");

export function fixture<T>(name: string): T {
  return JSON.parse(readFileSync(join(FIXTURES, name), "utf8")) as T;
}

/** Compare against a committed snapshot; SNAPSHOT_UPDATE=1 rewrites it. */
export function matchSnapshot(name: string, content: string): { ok: boolean; expected: string } {
  mkdirSync(SNAPSHOTS, { recursive: true });
  const path = join(SNAPSHOTS, name);
  if (process.env.SNAPSHOT_UPDATE === "1" || !existsSync(path)) {
    writeFileSync(path, content);
    return { ok: true, expected: content };
  }
  const expected = readFileSync(path, "utf8");
  return { ok: expected === content, expected };
}

export async function waitFor(probe: () => boolean, timeoutMs = 10000, stepMs = 25): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    if (probe()) {
      return;
    }
    await new Promise((resolve) => setTimeout(resolve, stepMs));
  }
  throw new Error("condition not met in time");
}
