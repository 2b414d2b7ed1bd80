/**
 * Seeded scenario presentation plan.
 *
 * An experiment presents every scenario once, optionally with one
 * condition repeated (a center-point replicate), in an order that is
 * random but reproducible: the seed is written on the session sheet,
 * and reloading the panel mid-session must yield the same order.
 */
import { mulberry32, shuffled } from "./prng.js";

export interface PlanEntry {
  /** Scenario to switch the engine to. */
  id: string;
  /** 1-based position in the presentation order. */
  ordinal: number;
  /** True on the second appearance of the repeated condition. */
  replicate: boolean;
}

export function presentationPlan(
  scenarioIds: readonly string[],
  seed: number,
  repeatId: string | null = null,
): PlanEntry[] {
  if (scenarioIds.length === 0) {
    throw new Error("no scenarios to present");
  }
  if (repeatId !== null && !scenarioIds.includes(repeatId)) {
    throw new Error(`repeated condition '${repeatId}' is not in the session`);
  }
  const pool = scenarioIds.slice();
  if (repeatId !== null) pool.push(repeatId);

  const order = shuffled(pool, mulberry32(seed));
  const seen = new Set<string>();
  return order.map((id, i) => {
    const replicate = seen.has(id);
    seen.add(id);
    return { id, ordinal: i + 1, replicate };
  });
}
