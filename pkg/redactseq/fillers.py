"""
PHI value generators for the synthetic corpus.

A filler takes a `random.Random` and returns the surface of one PHI
mention. Fillers are bound to template slot names (the i2b2 TYPE names).
Other packages may add or replace fillers by declaring entry points in
the `redactseq.fillers` group, such as:

    [project.entry-points."redactseq.fillers"]
    PATIENT = "mypackage.fillers:patient"
"""

import random
from importlib.metadata import entry_points
from typing import Callable, Dict

fillers_group = "redactseq.fillers"

Filler = Callable[[random.Random], str]

FIRST_NAMES = [
    "Matthew", "Anna", "Carlos", "Priya", "John", "Mei", "Fatima", "David", "Olga", "Kwame",
    "Laura", "Hiroshi", "Grace", "Ahmed", "Sofia", "Peter", "Nadia", "Luis", "Emma", "Tariq",
]  # fmt: skip
LAST_NAMES = [
    "Edelson", "Smith", "Garcia", "Patel", "Nguyen", "Kowalski", "Okafor", "Brown", "Rossi", "Tanaka",
    "Haddad", "Johnson", "Ivanova", "Murphy", "Lindqvist", "Mensah", "Schneider", "Dubois", "Cohen", "Park",
]  # fmt: skip
PROFESSIONS = [
    "teacher", "carpenter", "nurse", "electrician", "accountant", "farmer", "engineer", "chef",
    "firefighter", "lawyer", "plumber", "librarian", "pharmacist", "mechanic", "journalist",
]  # fmt: skip
HOSPITALS = [
    "Saint Mary Hospital", "Riverside Medical Center", "Lakeview Clinic", "Northgate General",
    "Mercy Regional", "Hillcrest Memorial",
]  # fmt: skip
CITIES = ["Winnipeg", "Houston", "Springfield", "Brandon", "Austin", "Portland", "Fargo", "Dayton"]
STATES = ["MB", "TX", "Ohio", "Oregon", "ND", "Ontario", "California"]
STREETS = ["Main Street", "Elm Avenue", "Pembina Highway", "Oak Road", "Maple Drive", "Portage Avenue"]
MONTHS = [
    "January", "February", "March", "April", "May", "June",
    "July", "August", "September", "October", "November", "December",
]  # fmt: skip
EMAIL_DOMAINS = ["example.org", "mail.com", "clinic.net"]


def patient(rng: random.Random) -> str:
    """Full name, or a bare surname."""
    if rng.random() < 0.3:
        return rng.choice(LAST_NAMES)
    return f"{rng.choice(FIRST_NAMES)} {rng.choice(LAST_NAMES)}"


def doctor(rng: random.Random) -> str:
    """Mostly a bare surname."""
    if rng.random() < 0.6:
        return rng.choice(LAST_NAMES)
    return f"{rng.choice(FIRST_NAMES)} {rng.choice(LAST_NAMES)}"


def username(rng: random.Random) -> str:
    return f"{rng.choice(FIRST_NAMES)[0].lower()}{rng.choice(LAST_NAMES).lower()}{rng.randint(1, 99)}"


def profession(rng: random.Random) -> str:
    return rng.choice(PROFESSIONS)


def hospital(rng: random.Random) -> str:
    return rng.choice(HOSPITALS)


def city(rng: random.Random) -> str:
    return rng.choice(CITIES)


def state(rng: random.Random) -> str:
    return rng.choice(STATES)


def street(rng: random.Random) -> str:
    return f"{rng.randint(1, 9999)} {rng.choice(STREETS)}"


def zipcode(rng: random.Random) -> str:
    return f"{rng.randint(10000, 99999)}"


def age(rng: random.Random) -> str:
    return str(rng.randint(18, 104))


def date(rng: random.Random) -> str:
    """Date in one of several common layouts."""
    year, month, day = rng.randint(1940, 2030), rng.randint(1, 12), rng.randint(1, 28)
    style = rng.randrange(5)
    if style == 0:
        return f"{month:02d}/{day:02d}/{year}"
    if style == 1:
        return f"{year}-{month:02d}-{day:02d}"
    if style == 2:
        return f"{MONTHS[month - 1]} {day}, {year}"
    if style == 3:
        return f"{day} {MONTHS[month - 1][:3]}"
    return f"{month}/{day}"


def phone(rng: random.Random) -> str:
    area, exchange, line = rng.randint(200, 999), rng.randint(200, 999), rng.randint(0, 9999)
    if rng.random() < 0.5:
        return f"({area}) {exchange}-{line:04d}"
    return f"{area}-{exchange}-{line:04d}"


def email(rng: random.Random) -> str:
    return f"{username(rng)}@{rng.choice(EMAIL_DOMAINS)}"


def medicalrecord(rng: random.Random) -> str:
    return str(rng.randint(1000000, 99999999))


def account(rng: random.Random) -> str:
    return f"{rng.choice('ABCDEFGH')}{rng.randint(100000, 999999)}"


def idnum(rng: random.Random) -> str:
    return f"{rng.randint(100, 999)}-{rng.randint(10, 99)}-{rng.randint(1000, 9999)}"


BUILTIN_FILLERS: Dict[str, Filler] = {
    "PATIENT": patient,
    "DOCTOR": doctor,
    "USERNAME": username,
    "PROFESSION": profession,
    "HOSPITAL": hospital,
    "CITY": city,
    "STATE": state,
    "STREET": street,
    "ZIP": zipcode,
    "AGE": age,
    "DATE": date,
    "PHONE": phone,
    "EMAIL": email,
    "MEDICALRECORD": medicalrecord,
    "ACCOUNT": account,
    "IDNUM": idnum,
}


def _installed_fillers() -> Dict[str, Filler]:
    """
    Retrieves and caches the fillers declared as entry points.

    Loads them from the `redactseq.fillers` group the first time.
    """
    if not hasattr(_installed_fillers, "value"):
        _installed_fillers.value = {entry.name: entry.load() for entry in entry_points(group=fillers_group)}
    return _installed_fillers.value


def available_fillers(**overrides: Filler) -> Dict[str, Filler]:
    """Built-in fillers, updated with the installed ones and then with `overrides`."""
    return {**BUILTIN_FILLERS, **_installed_fillers(), **overrides}


# vim: et ts=4 sw=4
