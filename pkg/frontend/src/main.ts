/** Browser entry point. Everything stateful lives in SessionController;
 * this file only wires URL config, DOM events, and a polling timer.
 *
 * Expected query parameters:
 *   ?api=http://localhost:8000&session=<id>&assessor=<name>[&token=<bearer>]
 */

import { ApiClient } from "./api.js";
import { renderView } from "./render.js";
import { SessionController } from "./session.js";

const POLL_MS = 5000;

function require(params: URLSearchParams, key: string): string {
  const value = params.get(key);
  if (value === null || value === "") {
    throw new Error(`missing required query parameter: ${key}`);
  }
  return value;
}

function mount(root: HTMLElement): SessionController {
  const params = new URLSearchParams(window.location.search);
  const client = new ApiClient({
    baseUrl: require(params, "api"),
    token: params.get("token") ?? undefined,
  });
  const controller = new SessionController(
    client,
    require(params, "session"),
    require(params, "assessor"),
  );

  controller.onChange((view) => {
    root.innerHTML = renderView(view);
  });

  root.addEventListener("click", (event) => {
    const target = event.target;
    if (target instanceof HTMLButtonElement && target.dataset.grade !== undefined) {
      void controller.grade(Number(target.dataset.grade));
    }
  });

  window.addEventListener("keydown", (event) => {
    if (event.key >= "0" && event.key <= "9") {
      void controller.grade(Number(event.key));
    }
  });

  window.setInterval(() => {
    void controller.refreshStatus();
    void controller.refreshCurve();
  }, POLL_MS);

  void controller.start();
  return controller;
}

const root = document.getElementById("app");
if (root === null) {
  throw new Error("missing #app mount point");
}
mount(root);
