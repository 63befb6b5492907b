import { describe, expect, it } from "vitest";
import {
  DEFAULT_API,
  autoTactic,
  decodeChoice,
  emptyDraft,
  encodeChoice,
  formatHash,
  irAfter,
  irBefore,
  lastIndex,
  manualTactic,
  meshAxes,
  parseHash,
  setAxis,
  setChoice,
  timelineRows,
} from "../src/state.js";
import { counts, report, summary } from "./helpers.js";

describe("timelineRows", () => {
  it("copies label, counts, and cost fields verbatim per report", () => {
    const s = summary({
      reports: [
        report({ label: "0:manual@B", counts: counts(0, 0, 0, 0) }),
        report({ label: "1:manual@B", counts: counts(2, 0, 0, 0) }),
      ],
    });
    const rows = timelineRows(s);
    expect(rows.map((r) => r.counts.all_gather)).toEqual([0, 2]);
    expect(rows.map((r) => r.label)).toEqual(["0:manual@B", "1:manual@B"]);
    expect(rows[0].runtime_s).toBe(s.reports[0].cost.runtime_s);
    expect(rows[1].peak_memory_bytes).toBe(s.reports[1].cost.peak_memory_bytes);
    expect(rows.map((r) => r.index)).toEqual([0, 1]);
  });

  it("is empty before any tactic", () => {
    expect(timelineRows(summary())).toEqual([]);
  });
});

describe("ir snapshots", () => {
  const s = summary({
    base_ir: "base",
    reports: [report({ ir: "after0" }), report({ ir: "after1" })],
  });

  it("diffs the first tactic against the base module", () => {
    expect(irBefore(s, 0)).toBe("base");
    expect(irAfter(s, 0)).toBe("after0");
  });

  it("diffs later tactics against the previous snapshot", () => {
    expect(irBefore(s, 1)).toBe("after0");
    expect(irAfter(s, 1)).toBe("after1");
  });

  it("shows the base module for the pre-tactic view", () => {
    expect(irAfter(s, -1)).toBe("base");
    expect(lastIndex(s)).toBe(1);
    expect(lastIndex(summary())).toBe(-1);
  });
});

describe("meshAxes", () => {
  it("parses the rendered mesh string", () => {
    expect(meshAxes("{B:4, M:2}")).toEqual(["B", "M"]);
    expect(meshAxes("{M:2}")).toEqual(["M"]);
    expect(meshAxes("{}")).toEqual([]);
  });
});

describe("draft editing", () => {
  it("builds the manual tactic payload the service expects", () => {
    let draft = emptyDraft("B");
    draft = setChoice(draft, "x", 0);
    draft = setChoice(draft, "w1", "replicated");
    expect(manualTactic(draft)).toEqual({
      kind: "manual",
      axis: "B",
      shardings: { x: 0, w1: "replicated" },
    });
  });

  it("clears one choice without touching the rest", () => {
    let draft = emptyDraft("B");
    draft = setChoice(draft, "x", 0);
    draft = setChoice(draft, "w1", 1);
    draft = setChoice(draft, "x", null);
    expect(manualTactic(draft).shardings).toEqual({ w1: 1 });
  });

  it("keeps choices when the axis changes", () => {
    let draft = setChoice(emptyDraft("B"), "x", "first_divisible");
    draft = setAxis(draft, "M");
    expect(manualTactic(draft)).toEqual({
      kind: "manual",
      axis: "M",
      shardings: { x: "first_divisible" },
    });
  });

  it("round-trips choices through the select encoding", () => {
    for (const choice of [0, 2, "replicated", "first_divisible"] as const) {
      expect(decodeChoice(encodeChoice(choice))).toBe(choice);
    }
    expect(decodeChoice("")).toBeNull();
    expect(decodeChoice("junk")).toBeNull();
  });

  it("builds the auto tactic payload", () => {
    expect(autoTactic(["B", "M"], 200)).toEqual({
      kind: "auto",
      axes: ["B", "M"],
      budget: 200,
    });
    expect(autoTactic(["B"], 50, 7)).toEqual({
      kind: "auto",
      axes: ["B"],
      budget: 50,
      seed: 7,
    });
  });
});

describe("hash routing", () => {
  it("defaults to the local service with no session", () => {
    expect(parseHash("")).toEqual({ sid: null, api: DEFAULT_API });
    expect(parseHash("#")).toEqual({ sid: null, api: DEFAULT_API });
  });

  it("round-trips session id and api override", () => {
    const route = { sid: "abc123def456", api: "http://10.0.0.5:9000" };
    expect(parseHash(formatHash(route))).toEqual(route);
  });

  it("omits the api param when it is the default", () => {
    const hash = formatHash({ sid: "abc123def456", api: DEFAULT_API });
    expect(hash).toBe("#s=abc123def456");
    expect(parseHash(hash)).toEqual({ sid: "abc123def456", api: DEFAULT_API });
  });

  it("drops the hash entirely for the blank route", () => {
    expect(formatHash({ sid: null, api: DEFAULT_API })).toBe("");
  });
});
