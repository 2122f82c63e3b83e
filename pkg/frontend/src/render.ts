/** Pure HTML builders for the explorer.
 *
 * Every function maps service data to a markup string with no side effects,
 * so the render layer is testable without a browser. Numbers are formatted
 * here and only here — values arrive verbatim from the service and rounding
 * happens at render time.
 */

import {
  CounterfactualEntry,
  FeatureImportance,
  FeatureMap,
  PredictResponse,
  SchemaDoc,
} from "./api.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}

function fmt(value: number, digits = 4): string {
  return value.toFixed(digits);
}

export function renderBanner(message: string): string {
  return (
    `<div class="banner" role="alert">` +
    `<span class="banner-text">${escapeHtml(message)}</span>` +
    `<button type="button" data-action="retry">Retry</button>` +
    `</div>`
  );
}

export function renderForm(
  schema: SchemaDoc,
  form: FeatureMap,
  fieldErrors: Record<string, string>,
): string {
  const rows = schema.columns.map((col) => {
    const value = form[col.name];
    const error = fieldErrors[col.name];
    const errorHtml = error
      ? `<span class="field-error" data-field="${escapeHtml(col.name)}">` +
        `${escapeHtml(error)}</span>`
      : "";
    let control: string;
    if (col.kind === "numeric") {
      const hint =
        col.min !== undefined && col.max !== undefined
          ? `<span class="range-hint">train range ${fmt(col.min, 3)} to ` +
            `${fmt(col.max, 3)}</span>`
          : "";
      control =
        `<input type="number" step="any" name="${escapeHtml(col.name)}" ` +
        `value="${typeof value === "number" ? value : ""}" ` +
        `data-kind="numeric">` +
        hint;
    } else {
      const options = (col.categories ?? [])
        .map((cat) => {
          const selected = cat === value ? " selected" : "";
          return `<option value="${escapeHtml(cat)}"${selected}>` +
            `${escapeHtml(cat)}</option>`;
        })
        .join("");
      control =
        `<select name="${escapeHtml(col.name)}" data-kind="categorical">` +
        `${options}</select>`;
    }
    return (
      `<label class="field" data-field="${escapeHtml(col.name)}">` +
      `<span class="field-name">${escapeHtml(col.name)}</span>` +
      control +
      errorHtml +
      `</label>`
    );
  });
  const classes = schema.classes
    .map((c) => `<span class="class-label">${escapeHtml(c)}</span>`)
    .join(", ");
  return (
    `<form class="whatif-form">` +
    rows.join("") +
    `<div class="classes">classes: ${classes}</div>` +
    `<button type="submit" data-action="submit">Predict</button>` +
    `</form>`
  );
}

export function renderProbabilities(
  classes: string[],
  probabilities: number[],
  predicted: string,
): string {
  const rows = classes.map((cls, i) => {
    const p = probabilities[i] ?? 0;
    const pct = (p * 100).toFixed(1);
    const mark = cls === predicted ? " predicted" : "";
    return (
      `<div class="prob-row${mark}">` +
      `<span class="prob-class">${escapeHtml(cls)}</span>` +
      `<span class="prob-bar" style="width:${pct}%"></span>` +
      `<span class="prob-value">${pct}%</span>` +
      `</div>`
    );
  });
  return `<div class="probabilities">${rows.join("")}</div>`;
}

export function renderImportance(importance: FeatureImportance): string {
  const entries = Object.entries(importance.per_column);
  const peak = Math.max(...entries.map(([, w]) => Math.abs(w)), 1e-12);
  const rows = entries.map(([name, weight]) => {
    const side = weight < 0 ? "negative" : "positive";
    const width = ((Math.abs(weight) / peak) * 100).toFixed(1);
    return (
      `<div class="importance-row">` +
      `<span class="importance-name">${escapeHtml(name)}</span>` +
      `<span class="importance-bar ${side}" style="width:${width}%"></span>` +
      `<span class="importance-value">${fmt(weight)}</span>` +
      `</div>`
    );
  });
  return (
    `<div class="importance">` +
    `<div class="importance-bias">bias ${fmt(importance.bias)}</div>` +
    rows.join("") +
    `</div>`
  );
}

function diffChanged(diff: number | boolean | undefined): boolean {
  if (typeof diff === "boolean") return diff;
  if (typeof diff === "number") return diff !== 0;
  return false;
}

function formatDiff(diff: number | boolean | undefined): string {
  if (typeof diff === "number") {
    const sign = diff > 0 ? "+" : "";
    return `${sign}${fmt(diff)}`;
  }
  if (diff === true) return "changed";
  return "±0";
}

export function renderCounterfactualCard(
  entry: CounterfactualEntry,
  input: FeatureMap,
  columnOrder: string[],
): string {
  const rows = columnOrder.map((name) => {
    const diff = entry.diffs[name];
    const changed = diffChanged(diff);
    const from = input[name];
    const to = entry.features[name];
    const fromText =
      typeof from === "number" ? fmt(from) : escapeHtml(String(from ?? ""));
    const toText =
      typeof to === "number" ? fmt(to) : escapeHtml(String(to ?? ""));
    return (
      `<tr class="diff-row${changed ? " changed" : ""}" ` +
      `data-field="${escapeHtml(name)}">` +
      `<td>${escapeHtml(name)}</td>` +
      `<td>${fromText}</td>` +
      `<td>${toText}</td>` +
      `<td class="diff-amount">${changed ? formatDiff(diff) : ""}</td>` +
      `</tr>`
    );
  });
  const badge = entry.plausible
    ? `<span class="badge plausible">plausible</span>`
    : `<span class="badge implausible">implausible</span>`;
  const validity = entry.valid
    ? `<span class="badge valid">reaches target</span>`
    : `<span class="badge invalid">misses target</span>`;
  return (
    `<section class="card" data-target="${escapeHtml(entry.target_class)}">` +
    `<h3>to ${escapeHtml(entry.target_class)}</h3>` +
    badge +
    validity +
    `<span class="log-density">log density ${fmt(entry.log_density)}</span>` +
    `<table class="diffs"><thead><tr>` +
    `<th>feature</th><th>now</th><th>counterfactual</th><th>shift</th>` +
    `</tr></thead><tbody>${rows.join("")}</tbody></table>` +
    `<button type="button" data-action="apply" ` +
    `data-target="${escapeHtml(entry.target_class)}">Apply</button>` +
    `</section>`
  );
}

export function renderPrediction(
  response: PredictResponse,
  columnOrder: string[],
): string {
  const cards = response.counterfactuals
    .map((entry) =>
      renderCounterfactualCard(entry, response.input, columnOrder),
    )
    .join("");
  return (
    `<div class="prediction">` +
    `<h2>predicted: ${escapeHtml(response.predicted_class)}</h2>` +
    renderProbabilities(
      response.classes,
      response.probabilities,
      response.predicted_class,
    ) +
    renderImportance(response.feature_importance) +
    `<div class="cards">${cards}</div>` +
    `</div>`
  );
}
