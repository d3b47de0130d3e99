"use strict";

const cp = require("child_process");
const psTree = require("ps-tree");
const quote = require("shell-quote").quote;

module.exports = function spawn(command, args, options) {
  return new Promise((resolve, reject) => {
    const child = cp.spawn(command, args, { stdio: "inherit", shell: quote([command]) !== command });
    child.on("error", reject);
    child.on("close", (code) => (code === 0 ? resolve() : reject(new Error(`${command} exited with ${code}`))));
    child.kill = function kill() {
      psTree(child.pid, (err, children) => {
        for (const c of children || []) {
          process.kill(Number(c.PID));
        }
      });
    };
  });
};
