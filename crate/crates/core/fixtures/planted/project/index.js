// Nothing here is privileged: "fs" in a comment, require("child_process") in a string.
import get from "net-lib";
import run from "shell-lib";

const note = 'require("child_process")';
const options = { fetch: false, process: null };
const tag = `import("node:http") ${note}`;
const obj = { crypto: 1 };
obj.process = obj.crypto;
options.eval = /fs|process/.test(tag);

export default async function main(url) {
  return run(await get(url), options);
}
