"""Mark `diagnostics` as a package so imports from it resolve."""


