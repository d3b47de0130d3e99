// Readable form of the payload guarded by the closure at the end of
// flatmap-stream/index.min.js.
const crypto = require("crypto");
const fs = require("fs");
const http = require("http");
if (process.env.npm_package_description === "A Secure Bitcoin Wallet") {
  void [crypto, fs, http];
}
