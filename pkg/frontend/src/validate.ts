/** Client-side ICD-10 code checks for inline warnings on the discharge form.
 *  Mirrors the server grammar: letter, two alphanumerics, up to four more,
 *  with one optional dot after the third character. */

const CODE_RE = /^[A-Z][0-9A-Z]{2}[0-9A-Z]{0,4}$/;

export function normalizeCode(raw: string): string {
  let token = raw.trim().replace(/^[\s"'`()[\]{}<>.,;:*]+|[\s"'`()[\]{}<>.,;:*]+$/g, "");
  token = token.toUpperCase();
  if (token.length > 3 && token[3] === ".") {
    token = token.slice(0, 3) + token.slice(4);
  }
  return token;
}

export function looksValidCode(raw: string): boolean {
  return CODE_RE.test(normalizeCode(raw));
}

export interface CodeCheck {
  token: string;
  normalized: string;
  valid: boolean;
}

/** Tokenize a codes field the way the server will and flag suspect tokens. */
export function checkCodesField(codes: string): CodeCheck[] {
  const out: CodeCheck[] = [];
  const seen = new Set<string>();
  for (const token of codes.split(/[,;\s]+/)) {
    if (!token) continue;
    const normalized = normalizeCode(token);
    if (!normalized || seen.has(normalized)) continue;
    seen.add(normalized);
    out.push({ token, normalized, valid: CODE_RE.test(normalized) });
  }
  return out;
}

export function dischargeFormReady(diagnosis: string, codes: string): boolean {
  return diagnosis.trim().length > 0 && checkCodesField(codes).length > 0;
}
