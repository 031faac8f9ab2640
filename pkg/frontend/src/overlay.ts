import { OverlayDoc } from "./api.js";

// ============================================
// OVERLAY DRAWING (2D vector graphics only)
// ============================================

const SVG_NS = "http://www.w3.org/2000/svg";

export interface OverlayStyle {
  width: number;
  height: number;
  boxColor: string;
  keypointColor: string;
  keypointRadius: number;
}

export const DEFAULT_STYLE: OverlayStyle = {
  width: 640,
  height: 480,
  boxColor: "#27c93f",
  keypointColor: "#ff5f56",
  keypointRadius: 3,
};

/**
 * Render one keyframe's overlay as an SVG element: the projected box
 * wireframe as line segments and each visible keypoint as a circle.
 * Coordinates are used exactly as the server sent them.
 */
export function renderOverlay(
  doc: OverlayDoc,
  style: OverlayStyle = DEFAULT_STYLE,
): SVGSVGElement {
  const svg = document.createElementNS(SVG_NS, "svg");
  svg.setAttribute("viewBox", `0 0 ${style.width} ${style.height}`);
  svg.setAttribute("class", "overlay");
  svg.dataset.frame = String(doc.frame);

  for (const [[u0, v0], [u1, v1]] of doc.box_segments) {
    const line = document.createElementNS(SVG_NS, "line");
    line.setAttribute("x1", String(u0));
    line.setAttribute("y1", String(v0));
    line.setAttribute("x2", String(u1));
    line.setAttribute("y2", String(v1));
    line.setAttribute("stroke", style.boxColor);
    svg.appendChild(line);
  }
  for (const kp of doc.keypoints) {
    if (kp === null) {
      continue; // behind the camera in this keyframe
    }
    const dot = document.createElementNS(SVG_NS, "circle");
    dot.setAttribute("cx", String(kp[0]));
    dot.setAttribute("cy", String(kp[1]));
    dot.setAttribute("r", String(style.keypointRadius));
    dot.setAttribute("fill", style.keypointColor);
    svg.appendChild(dot);
  }
  return svg;
}
