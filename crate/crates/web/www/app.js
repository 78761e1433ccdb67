import init, { groundTruth, alignment, tokenize } from "./pkg/dalign_web.js";

const $ = (id) => document.getElementById(id);

let vulnerableLines = [];

function showError(target, e) {
  target.innerHTML = "";
  const p = document.createElement("p");
  p.className = "error";
  p.textContent = String(e.message ?? e);
  target.append(p);
}

function renderLines(target, lines, mark) {
  target.innerHTML = "";
  lines.forEach((text, i) => {
    const span = document.createElement("span");
    span.className = "line" + (mark.has(i) ? " vuln" : "");
    span.textContent = `${String(i).padStart(3)}  ${text}`;
    target.append(span);
  });
}

function extract() {
  const code = $("vuln").value;
  const gt = JSON.parse(groundTruth(code, $("fixed").value));
  vulnerableLines = gt.vulnerable_lines;
  renderLines($("gt-out"), code.split("\n"), new Set(vulnerableLines));
}

function align() {
  const out = $("align-out");
  try {
    const scores = $("scores").value.split(",").map((s) => Number(s.trim()));
    const r = JSON.parse(
      alignment(new Float64Array(scores), new Uint32Array(vulnerableLines), $("predicted").checked ? 1 : 0),
    );
    const rows = r.rescaled
      .map((v, i) => {
        const mark = vulnerableLines.includes(i) ? " class=\"vuln\"" : "";
        return `<tr${mark}><td>${i}</td><td>${v.toFixed(4)}</td>` +
          `<td style="text-align:left"><span class="bar" style="width:${(v * 12).toFixed(2)}rem"></span></td></tr>`;
      })
      .join("");
    const verdict = r.excluded ? `excluded (${r.excluded})` : `DA = ${r.da.toFixed(4)}`;
    out.innerHTML =
      `<p><b>${verdict}</b>; intersection ${r.intersection.toFixed(4)}, union ${r.union.toFixed(4)}</p>` +
      `<table><tr><th>line</th><th>relevance</th><th></th></tr>${rows}</table>`;
  } catch (e) {
    showError(out, e);
  }
}

function tok() {
  const out = $("tok-out");
  try {
    const r = JSON.parse(tokenize($("vuln").value, Number($("vocab-size").value), 510));
    out.innerHTML = "";
    const lines = Array.from({ length: r.line_count }, () => document.createElement("span"));
    lines.forEach((l, i) => {
      l.className = "line";
      l.append(`${String(i).padStart(3)}  `);
    });
    for (const t of r.tokens) {
      if (t.text === "\n") continue;
      const s = document.createElement("span");
      s.className = "tok";
      s.title = `id ${t.id}`;
      s.textContent = t.text;
      lines[t.line].append(s);
    }
    out.append(...lines);
    const note = document.createElement("span");
    note.className = "line";
    note.textContent = `\n${r.tokens.length} tokens, vocabulary ${r.vocab_size}${r.truncated ? ", truncated" : ""}`;
    out.append(note);
  } catch (e) {
    showError(out, e);
  }
}

await init();
$("diff").onclick = () => { extract(); align(); };
$("align").onclick = align;
$("tok").onclick = tok;
extract();
align();
tok();
