"""The 78-economy sample universe and its emission-level clusters (ISO3 codes)."""

REGIONS = {
    "Africa": (
        "DZA", "BEN", "BWA", "CMR", "COG", "COD", "CIV", "EGY", "ETH", "GAB",
        "GMB", "GHA", "KEN", "LSO", "MUS", "MAR", "MOZ", "NER", "NGA", "SEN",
        "ZAF", "SDN", "SWZ", "TZA", "TGO", "TUN", "YEM", "ZMB", "ZWE",
    ),
    "Asia": (
        "ARM", "BGD", "KHM", "CHN", "FJI", "IND", "IDN", "IRN", "JOR", "KGZ",
        "MDV", "MNG", "MMR", "NPL", "PAK", "PHL", "RUS", "LKA", "SYR", "TJK",
        "THA", "VNM",
    ),
    "Europe": ("ALB", "BGR", "MDA", "ROU", "SRB", "TUR", "UKR"),
    "Latin America and the Caribbean": (
        "ARG", "BLZ", "BOL", "BRA", "COL", "CRI", "DOM", "ECU", "SLV", "GTM",
        "GUY", "HTI", "HND", "JAM", "MEX", "NIC", "PAN", "PRY", "PER", "VEN",
    ),
}

EMISSION_GROUPS = {
    "low": (
        "BEN", "CMR", "COD", "CIV", "ETH", "GMB", "GHA", "KEN", "MOZ", "NER",
        "NGA", "SEN", "SDN", "TZA", "TGO", "ZMB", "BGD", "KHM", "MMR", "NPL",
        "PAK", "LKA", "TJK", "HTI",
    ),
    "medium": (
        "COG", "EGY", "SWZ", "LSO", "MAR", "YEM", "ZWE", "ARM", "FJI", "IND",
        "IDN", "KGZ", "PHL", "VNM", "ALB", "BLZ", "BOL", "BRA", "COL", "CRI",
        "SLV", "GTM", "HND", "NIC", "PRY", "PER",
    ),
    "high": (
        "DZA", "BWA", "GAB", "MUS", "ZAF", "TUN", "CHN", "IRN", "JOR", "MDV",
        "MNG", "RUS", "SYR", "THA", "BGR", "MDA", "ROU", "SRB", "TUR", "UKR",
        "ARG", "DOM", "ECU", "GUY", "JAM", "MEX", "PAN", "VEN",
    ),
}

SAMPLE_ISO3 = tuple(sorted(c for codes in REGIONS.values() for c in codes))

EMISSION_GROUP_OF = {c: g for g, codes in EMISSION_GROUPS.items() for c in codes}
