"""Published rational certificate for the two-location disk example (example3.hs).

Every number below is transcribed from the published solution; the Gram
matrices of the free SOS terms are assembled as sum w * h h^T from the listed
weighted squares.
"""

from fractions import Fraction as F

from invforge.certify import INDUCTIVE, SHARED, Certificate, Multiplier
from invforge.poly import parse_poly
from invforge.recover import RationalMatrix

V = ("x1", "x2")
BASIS1 = ((0, 0), (0, 1), (1, 0))  # 1, x2, x1


def P(text):
    return parse_poly(text, V)


PHI = "-22/49 + 319/931*x1 - 251/931*x2 + 239/931*x1^2"

# name -> (polynomial, [(weight, h), ...])
SQUARES = {
    "sigma0": (
        "838/931 - 1565/931*x1 - 251/931*x2 + 867/931*x1^2 + 628/931*x2^2",
        [
            ("931/838", "838/931 - 251/1862*x2 - 1565/1862*x1"),
            ("3120712/2042055", "2042055/3120712*x2 - 392815/3120712*x1"),
            ("380230641/46469677", "46469677/380230641*x1"),
        ],
    ),
    "lambda120": (
        "8403/1900 - 4463/4655*x1 - 14169/4655*x2 + 472/931*x1^2 + 12/19*x2^2",
        [
            ("1900/8403", "8403/1900 - 14169/9310*x2 - 4463/9310*x1"),
            ("127778819/13782225", "13782225/127778819*x2 - 21078749/127778819*x1"),
            ("12831251475/2601209876", "2601209876/12831251475*x1"),
        ],
    ),
    "lambda210": (
        "133187/37240 - 1271/931*x1 - 1997/532*x2 + 1034/931*x1^2 + 1110/931*x2^2",
        [
            ("37240/133187", "133187/37240 - 1997/1064*x2 - 1271/1862*x1"),
            ("991976776/205638355", "205638355/991976776*x2 - 12690935/35427742*x1"),
            ("38289861701/13835779654", "13835779654/38289861701*x1"),
        ],
    ),
    "phi10": (
        "153/931 + 89/133*x1 + 298/931*x2 + 227/931*x1*x2 + 971/931*x1^2 + 272/931*x2^2",
        [
            ("931/153", "153/931 + 149/931*x2 + 89/266*x1"),
            ("142443/19415", "19415/142443*x2 - 29048/142443*x1"),
            ("72301460/4096293", "4096293/72301460*x1"),
        ],
    ),
    "phi20": (
        "3751/931 - 3337/1862*x1 - 3373/1862*x2 + 349/931*x1^2 + 478/931*x1*x2 + 319/931*x2^2",
        [
            ("931/3751", "3751/931 - 3373/3724*x2 - 3337/3724*x1"),
            ("55874896/7767975", "7767975/55874896*x2 + 3088123/55874896*x1"),
            ("7231984725/1110827906", "1110827906/7231984725*x1"),
        ],
    ),
    "mu0": (
        "672/485 - 18/97*x1 + 137/97*x2 + 9/97*x1*x2 + 66/97*x1^2 + 92/97*x2^2",
        [
            ("3325/4992", "4992/3325 + 197/266*x2 + 809/1862*x1"),
            ("978432/235283", "235283/978432*x2 - 3984325/18590208*x1"),
            ("29133446909/941925575", "941925575/29133446909*x1"),
        ],
    ),
}

# identity -> (free SOS term, [constant multipliers in constraint order], margin)
IDENTITIES = {
    "init": ("sigma0", ["628/931"], None),
    "discrete[l1->l2#0]": ("lambda120", ["355/931", "233/931"], None),
    "discrete[l2->l1#1]": ("lambda210", ["45/133", "795/931"], None),
    "flow[l1]": ("phi10", ["15/931", "3/133"], "26/931"),
    "flow[l2]": ("phi20", ["349/931", "319/931"], "1259/931"),
    "unsafe[l1]": ("mu0", ["564/931"], "58/931"),
}

LIE_L2 = "251/931*x1 + 68/931*x2 + 478/931*x1*x2"


def square_list(name):
    poly, sq = SQUARES[name]
    return P(poly), [(F(w), P(h)) for w, h in sq]


def gram_from_squares(name) -> RationalMatrix:
    _, sq = square_list(name)
    n = len(BASIS1)
    G = [[F(0)] * n for _ in range(n)]
    for w, h in sq:
        c = [h.coefficient(m) for m in BASIS1]
        for i in range(n):
            for j in range(n):
                G[i][j] += w * c[i] * c[j]
    return RationalMatrix.from_rows(G)


def golden_certificate(system_hash: str = "") -> Certificate:
    phi = P(PHI)
    mults = []
    margins = {}
    for ident, (free, consts, eps) in IDENTITIES.items():
        mults.append(Multiplier(ident, 0, BASIS1, gram_from_squares(free)))
        for k, c in enumerate(consts, start=1):
            mults.append(Multiplier(ident, k, ((0, 0),), RationalMatrix.from_rows([[F(c)]])))
        if eps is not None:
            margins[ident] = F(eps)
    return Certificate(INDUCTIVE, SHARED, V, {"l1": phi, "l2": phi}, mults, margins, system_hash)
