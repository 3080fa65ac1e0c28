/** Parser for the service's multipart/mixed render responses.
 *
 * The body is a sequence of parts, each introduced by `--boundary` and
 * a short header block; payload length comes from Content-Length, so
 * arbitrary binary payloads survive. The final `--boundary--` marker
 * ends the stream.
 */

export interface Part {
  name: string;
  contentType: string;
  body: Uint8Array;
}

const ascii = new TextDecoder("ascii");

function indexOfCrlf(data: Uint8Array, from: number): number {
  for (let i = from; i + 1 < data.length; i++) {
    if (data[i] === 13 && data[i + 1] === 10) return i;
  }
  return -1;
}

function readLine(data: Uint8Array, from: number): { line: string; next: number } {
  const end = indexOfCrlf(data, from);
  if (end < 0) throw new Error("multipart: unterminated line");
  return { line: ascii.decode(data.subarray(from, end)), next: end + 2 };
}

export function parseMultipart(data: Uint8Array, boundary: string): Part[] {
  const open = `--${boundary}`;
  const close = `--${boundary}--`;
  const parts: Part[] = [];
  let at = 0;
  for (;;) {
    const { line, next } = readLine(data, at);
    if (line === close) return parts;
    if (line !== open) throw new Error(`multipart: expected boundary, got ${JSON.stringify(line)}`);
    at = next;
    let name = "";
    let contentType = "";
    let length = -1;
    for (;;) {
      const header = readLine(data, at);
      at = header.next;
      if (header.line === "") break;
      const sep = header.line.indexOf(":");
      if (sep < 0) throw new Error(`multipart: malformed header ${JSON.stringify(header.line)}`);
      const key = header.line.slice(0, sep).trim().toLowerCase();
      const value = header.line.slice(sep + 1).trim();
      if (key === "content-type") contentType = value;
      if (key === "content-length") length = Number(value);
      if (key === "content-disposition") {
        const match = /name="([^"]*)"/.exec(value);
        if (match) name = match[1];
      }
    }
    if (length < 0 || !Number.isInteger(length)) {
      throw new Error("multipart: part is missing Content-Length");
    }
    if (at + length > data.length) throw new Error("multipart: truncated part body");
    parts.push({ name, contentType, body: data.subarray(at, at + length) });
    at = at + length + 2; // payload then CRLF
  }
}
