#!/usr/bin/env node
"use strict";

const runAll = require("../../lib");

runAll(process.argv.slice(2), { stdout: process.stdout, stderr: process.stderr })
  .then(() => process.exit(0), (err) => {
    console.error("ERROR:", err.message);
    process.exit(1);
  });
