/** Command form models: client-side validation plus serialization to the
 * exact wire schema the control service accepts. Submit stays disabled until
 * a form validates. */

import type { CommandBody, ScenarioDoc } from "./types.js";

export interface CloseLanesForm {
  kind: "close_lanes";
  link: string;
  lanes: string; // "all" or comma-separated lane indexes
  fromS: string;
  toS: string;
}

export interface RetimeSignalForm {
  kind: "retime_signal";
  node: string;
  offsetS: string;
  phases: { approaches: string[]; greenS: string; yellowS: string }[];
}

export interface InjectAdvisoryForm {
  kind: "inject_advisory";
  id: string;
  rsu: string;
  links: string[];
  advisoryKind: "detour" | "lane_closure";
  validFromS: string;
  validToS: string;
}

export interface SetPenetrationForm {
  kind: "set_penetration";
  rate: string;
}

export interface SetRateForm {
  kind: "set_rate";
  rate: string; // "" = unthrottled
}

export type CommandForm =
  | CloseLanesForm
  | RetimeSignalForm
  | InjectAdvisoryForm
  | SetPenetrationForm
  | SetRateForm
  | { kind: "pause" }
  | { kind: "resume" };

const num = (s: string): number | null => {
  const v = Number(s);
  return s.trim() !== "" && Number.isFinite(v) ? v : null;
};

const onLattice = (v: number): boolean => Math.abs(v * 10 - Math.round(v * 10)) < 1e-9;

export function validate(form: CommandForm, scenario: ScenarioDoc): string[] {
  const errors: string[] = [];
  const linkIds = new Set(scenario.links.map((l) => l.id));
  const nodeIds = new Set(scenario.nodes.map((n) => n.id));
  switch (form.kind) {
    case "close_lanes": {
      const link = scenario.links.find((l) => l.id === form.link);
      if (!link) errors.push(`unknown link ${form.link}`);
      if (form.lanes.trim() !== "all") {
        const lanes = form.lanes.split(",").map((x) => Number(x.trim()));
        if (lanes.some((x) => !Number.isInteger(x) || x < 0)) {
          errors.push("lanes must be 'all' or non-negative integers");
        } else if (link && lanes.some((x) => x >= link.lanes)) {
          errors.push(`lane index outside 0..${link.lanes - 1}`);
        }
      }
      const from = num(form.fromS);
      const to = num(form.toS);
      if (from === null || to === null) errors.push("window times must be numbers");
      else if (!(from < to)) errors.push("closure window is empty");
      break;
    }
    case "retime_signal": {
      if (!nodeIds.has(form.node)) errors.push(`unknown node ${form.node}`);
      if (form.phases.length === 0) errors.push("at least one phase required");
      let cycle = 0;
      for (const p of form.phases) {
        const g = num(p.greenS);
        const y = num(p.yellowS);
        if (g === null || y === null || g < 0 || y < 0) {
          errors.push("phase durations must be non-negative numbers");
          continue;
        }
        if (!onLattice(g) || !onLattice(y)) errors.push("durations must be 0.1 s multiples");
        if (g + y <= 0) errors.push("phase has zero duration");
        cycle += g + y;
        for (const a of p.approaches) {
          if (!linkIds.has(a)) errors.push(`unknown approach link ${a}`);
          else {
            const l = scenario.links.find((x) => x.id === a)!;
            if (l.to !== form.node) errors.push(`${a} does not approach ${form.node}`);
          }
        }
      }
      if (cycle <= 0) errors.push("cycle duration must be positive");
      break;
    }
    case "inject_advisory": {
      if (!form.id.trim()) errors.push("advisory id required");
      if (!scenario.rsus.includes(form.rsu)) errors.push(`no RSU at node ${form.rsu}`);
      if (form.links.length === 0) errors.push("advisory needs at least one link");
      for (const l of form.links) if (!linkIds.has(l)) errors.push(`unknown link ${l}`);
      const from = num(form.validFromS);
      const to = num(form.validToS);
      if (from === null || to === null || !(from < to)) errors.push("validity window is empty");
      break;
    }
    case "set_penetration": {
      const rate = num(form.rate);
      if (rate === null || rate < 0 || rate > 1) errors.push("rate must be within [0, 1]");
      break;
    }
    case "set_rate": {
      if (form.rate.trim() !== "") {
        const rate = num(form.rate);
        if (rate === null || rate <= 0) errors.push("rate must be positive or empty");
      }
      break;
    }
    case "pause":
    case "resume":
      break;
  }
  return errors;
}

/** Serialize a validated form to the control service schema. */
export function toWire(form: CommandForm): CommandBody {
  switch (form.kind) {
    case "close_lanes":
      return {
        kind: "close_lanes",
        link: form.link,
        lanes:
          form.lanes.trim() === "all"
            ? "all"
            : form.lanes.split(",").map((x) => Number(x.trim())),
        from_s: Number(form.fromS),
        to_s: Number(form.toS),
      };
    case "retime_signal":
      return {
        kind: "retime_signal",
        node: form.node,
        offset_s: Number(form.offsetS || "0"),
        phases: form.phases.map((p) => ({
          approaches: [...p.approaches],
          green_s: Number(p.greenS),
          yellow_s: Number(p.yellowS || "0"),
        })),
      };
    case "inject_advisory":
      return {
        kind: "inject_advisory",
        id: form.id,
        rsu: form.rsu,
        links: [...form.links],
        advisory_kind: form.advisoryKind,
        valid_from_s: Number(form.validFromS),
        valid_to_s: Number(form.validToS),
      };
    case "set_penetration":
      return { kind: "set_penetration", rate: Number(form.rate) };
    case "set_rate":
      return { kind: "set_rate", rate: form.rate.trim() === "" ? null : Number(form.rate) };
    case "pause":
      return { kind: "pause" };
    case "resume":
      return { kind: "resume" };
  }
}
