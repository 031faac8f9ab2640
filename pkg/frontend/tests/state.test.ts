import { readFileSync, readdirSync } from "node:fs";
import { join } from "node:path";
import { fileURLToPath } from "node:url";

import { beforeEach, describe, expect, it } from "vitest";

import { AnnotationApi, PoseDoc } from "../src/api.js";
import { AnnotatorStore } from "../src/state.js";
import { FakeServer } from "./fakeServer.js";

let server: FakeServer;
let store: AnnotatorStore;

beforeEach(async () => {
  server = new FakeServer();
  store = new AnnotatorStore(new AnnotationApi("", server.fetch));
  await store.init("mug-0");
});

describe("init", () => {
  it("loads keyframes, pose, and one overlay per keyframe", () => {
    const s = store.snapshot();
    expect(s.sequenceId).toBe("synthetic-0");
    expect(s.keyframes.map((k) => k.index)).toEqual([0, 2, 5]);
    expect(s.pose).toEqual(server.pose);
    expect(s.revision).toBe(0);
    expect(s.overlays.map((o) => o.frame)).toEqual([0, 2, 5]);
    expect(s.readOnly).toBe(false);
  });
});

describe("server-owned pose invariant", () => {
  it("every pose ever displayed was emitted by the server", async () => {
    const seen: PoseDoc[] = [];
    store.subscribe((s) => {
      if (s.pose !== null) {
        seen.push(s.pose);
      }
    });
    await store.nudgeRotation("z", 1);
    await store.nudgeTranslation("x", -1);
    // the fake stamps an unpredictable rotation on each edit; if the client
    // did any pose math of its own these would diverge
    expect(store.snapshot().pose).toEqual(server.pose);
    const issued = [server.pose, ...seen];
    for (const p of seen) {
      expect(issued).toContainEqual(p);
    }
  });

  it("client source performs no rotation arithmetic", () => {
    const srcDir = fileURLToPath(new URL("../src", import.meta.url));
    for (const name of readdirSync(srcDir)) {
      const text = readFileSync(join(srcDir, name), "utf8");
      for (const token of ["Math.sin", "Math.cos", "Math.atan", "Math.acos",
                           "quatMul", "matmul"]) {
        expect(text, `${name} must not contain ${token}`).not.toContain(token);
      }
    }
  });

  it("overlays re-render from the nudge response", async () => {
    await store.nudgeRotation("y", 1);
    const overlays = store.snapshot().overlays;
    expect(overlays.map((o) => o.frame)).toEqual([0, 2, 5]);
    // fake encodes the revision into overlay coordinates
    expect(overlays[0].box_segments[0][0][0]).toBe(1);
  });
});

describe("nudging", () => {
  it("five 0.5 degree clicks request 2.5 degrees total", async () => {
    store.setSteps(0.5, 0.5);
    for (let i = 0; i < 5; i++) {
      await store.nudgeRotation("z", 1);
    }
    const posts = server.requests.filter((r) => r.path.endsWith("/nudge"));
    expect(posts).toHaveLength(5);
    for (const p of posts) {
      expect(p.body).toMatchObject({ axis: "z", delta_deg: 0.5 });
    }
    expect(posts.map((p) => p.body!.expected_revision)).toEqual(
      [0, 1, 2, 3, 4],
    );
    expect(server.totals.z).toBeCloseTo(2.5, 12);
    expect(store.snapshot().revision).toBe(5);
  });

  it("allows at most one edit in flight", async () => {
    let release!: () => void;
    server.gate = new Promise((resolve) => {
      release = resolve;
    });
    const first = store.nudgeRotation("x", 1);
    const second = store.nudgeRotation("x", 1); // dropped: edit in flight
    release();
    await Promise.all([first, second]);
    expect(server.requests.filter((r) => r.path.endsWith("/nudge")))
      .toHaveLength(1);
    server.gate = null;
    await store.nudgeRotation("x", 1); // accepted again after settle
    expect(store.snapshot().revision).toBe(2);
  });
});

describe("conflicts", () => {
  it("adopts the winning pose, refetches overlays, and stays editable", async () => {
    const winner: PoseDoc = {
      rotation: [9.9, 0, 0, 0],
      translation: [1, 2, 3],
      scale: [0.2, 0.16, 0.18],
    };
    server.conflictOnce = { pose: winner, revision: 4 };
    const before = server.requests.length;
    await store.nudgeRotation("z", 1);
    const s = store.snapshot();
    expect(s.pose).toEqual(winner);
    expect(s.revision).toBe(4);
    expect(s.notice).toMatch(/conflict/i);
    expect(s.readOnly).toBe(false);
    const refetches = server.requests
      .slice(before)
      .filter((r) => r.path.includes("/overlay"));
    expect(refetches).toHaveLength(3);
    // non-blocking: the next edit goes through at the adopted revision
    await store.nudgeTranslation("y", 1);
    expect(store.snapshot().revision).toBe(5);
    expect(store.snapshot().notice).toBeNull();
  });
});

describe("unreachable service", () => {
  it("switches to read-only and stops issuing edits", async () => {
    server.down = true;
    await store.nudgeRotation("x", 1);
    const s = store.snapshot();
    expect(s.readOnly).toBe(true);
    expect(s.notice).toMatch(/read-only/i);
    const count = server.requests.length;
    await store.nudgeTranslation("x", 1);
    expect(server.requests).toHaveLength(count);
    // displayed pose is still the last acknowledged one
    expect(s.pose).toEqual(server.pose);
  });
});
