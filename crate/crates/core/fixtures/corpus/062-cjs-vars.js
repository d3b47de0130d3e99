var fetch = require('node-fetch');
var require2 = 1;
if (fetch) { var conditional = 2 }
module.exports = fetch;
