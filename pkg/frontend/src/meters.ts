/**
 * Per-channel level meters: RMS bar, peak-hold tick, numeric readout.
 *
 * The visual scale spans -60..0 dBFS. Bars are positioned with
 * three-decimal percentages so the on-screen geometry stays within
 * a few thousandths of a dB of the pushed value; the numeric label
 * is the authoritative readout at one decimal.
 */
import { MeterFrame } from "./protocol.js";

export const SCALE_MIN_DB = -60;
export const SCALE_MAX_DB = 0;

export function meterFraction(db: number): number {
  const f = (db - SCALE_MIN_DB) / (SCALE_MAX_DB - SCALE_MIN_DB);
  return Math.min(1, Math.max(0, f));
}

export function fractionToDb(fraction: number): number {
  return SCALE_MIN_DB + fraction * (SCALE_MAX_DB - SCALE_MIN_DB);
}

export function formatDb(db: number): string {
  return db.toFixed(1);
}

interface Row {
  root: HTMLElement;
  bar: HTMLElement;
  hold: HTMLElement;
  label: HTMLElement;
}

export class MeterStrip {
  private rows: Row[] = [];

  constructor(private readonly container: HTMLElement) {}

  update(frame: MeterFrame): void {
    if (this.rows.length !== frame.channels.length) {
      this.rebuild(frame.channels.length);
    }
    frame.channels.forEach((ch, i) => {
      const row = this.rows[i];
      row.bar.style.width = (meterFraction(ch.rms_db) * 100).toFixed(3) + "%";
      row.hold.style.left =
        (meterFraction(ch.peak_hold_db) * 100).toFixed(3) + "%";
      row.label.textContent = formatDb(ch.rms_db);
      row.root.classList.toggle("clipping", ch.peak_hold_db >= -1.0);
    });
  }

  private rebuild(channels: number): void {
    this.container.textContent = "";
    this.rows = [];
    for (let i = 0; i < channels; i++) {
      const root = document.createElement("div");
      root.className = "meter-row";

      const name = document.createElement("span");
      name.className = "meter-name";
      name.textContent = `out ${i + 1}`;

      const track = document.createElement("div");
      track.className = "meter-track";
      const bar = document.createElement("div");
      bar.className = "meter-bar";
      const hold = document.createElement("div");
      hold.className = "meter-hold";
      track.append(bar, hold);

      const label = document.createElement("span");
      label.className = "meter-db";
      label.textContent = formatDb(SCALE_MIN_DB);

      root.append(name, track, label);
      this.container.append(root);
      this.rows.push({ root, bar, hold, label });
    }
  }
}
