/** Pure renderers: SessionView in, HTML string out.
 *
 * No DOM access here, so every renderer is snapshot-testable against
 * recorded service responses. The browser shell (main.ts) only mounts the
 * strings and forwards events.
 */

import type { Assignment, CalibrationData, SessionView } from "./types.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}

export function renderProgress(judged: number, budget: number): string {
  return (
    `<div class="progress">` +
    `<progress max="${budget}" value="${judged}"></progress>` +
    `<span class="counters">${judged} / ${budget} judged</span>` +
    `</div>`
  );
}

export function renderBanner(banner: string | null): string {
  if (banner === null) return `<div class="banner" hidden></div>`;
  return `<div class="banner">${escapeHtml(banner)}</div>`;
}

export function renderGradeButtons(levels: number[], disabled: boolean): string {
  const attr = disabled ? " disabled" : "";
  const buttons = levels
    .map((g) => `<button data-grade="${g}"${attr}>${g}</button>`)
    .join("");
  return `<div class="grades">${buttons}<span class="hint">keys 0..${
    levels[levels.length - 1] ?? 0
  }</span></div>`;
}

export function renderAssignment(assignment: Assignment, submitting: boolean): string {
  return (
    `<section class="assignment">` +
    `<h2>${escapeHtml(assignment.topic_title)}</h2>` +
    `<p class="description">${escapeHtml(assignment.topic_description)}</p>` +
    `<article class="document" data-doc="${escapeHtml(assignment.doc_id)}">` +
    `${escapeHtml(assignment.document_text)}</article>` +
    renderGradeButtons(assignment.grade_levels, submitting) +
    `</section>`
  );
}

export function renderComplete(view: SessionView): string {
  return (
    `<section class="complete">` +
    `<h2>all assigned pairs are judged</h2>` +
    `<p>${view.judged} of ${view.budget} judgments spent; session is ` +
    `${escapeHtml(view.status)}.</p>` +
    `</section>`
  );
}

/** Calibration curves as an SVG line chart on the unit square (y grows
 * upward); the dashed diagonal marks the identity calibrator. */
export function renderCurveSvg(curve: CalibrationData | null): string {
  if (curve === null) return `<div class="curve" hidden></div>`;
  const polylines = Object.keys(curve.curves)
    .sort()
    .map((grade) => {
      const points = (curve.curves[grade] ?? [])
        .map(([x, y]) => `${(x * 100).toFixed(1)},${(100 - y * 100).toFixed(1)}`)
        .join(" ");
      return `<polyline fill="none" class="grade-${grade}" points="${points}"><title>grade ${grade}</title></polyline>`;
    })
    .join("");
  return (
    `<figure class="curve">` +
    `<figcaption>calibration (${escapeHtml(curve.kind)}, ` +
    `${curve.judged} judgments)</figcaption>` +
    `<svg viewBox="0 0 100 100" preserveAspectRatio="none">` +
    `<line x1="0" y1="100" x2="100" y2="0" stroke-dasharray="4 3"></line>` +
    polylines +
    `</svg></figure>`
  );
}

export function renderView(view: SessionView): string {
  let body: string;
  if (view.phase === "complete") {
    body = renderComplete(view);
  } else if (view.assignment !== null) {
    body = renderAssignment(view.assignment, view.phase === "submitting");
  } else {
    body = `<section class="waiting"><p>fetching the next pair&hellip;</p></section>`;
  }
  return (
    `<header>` +
    `<h1>session ${escapeHtml(view.sessionId)}</h1>` +
    `<span class="assessor">assessor ${escapeHtml(view.assessorId)}</span>` +
    renderProgress(view.judged, view.budget) +
    `</header>` +
    renderBanner(view.banner) +
    body +
    renderCurveSvg(view.curve)
  );
}
