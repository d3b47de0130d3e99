'use strict';
const fs = require('fs');
var helper = function () { return fs };
module.exports = { helper };
