"""Router modules for the discretization bias lab API."""
