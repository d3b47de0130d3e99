"use strict";

const fs = require("fs");
const path = require("path");
const spawn = require("./spawn");

function readPackageJson() {
  const file = path.resolve(process.cwd(), "package.json");
  return JSON.parse(fs.readFileSync(file, "utf8"));
}

module.exports = function runAll(patterns, options) {
  const scripts = readPackageJson().scripts || {};
  const tasks = patterns.filter((p) => p in scripts);
  return tasks.reduce(
    (prev, task) => prev.then(() => spawn("npm", ["run", task], options)),
    Promise.resolve(),
  );
};
